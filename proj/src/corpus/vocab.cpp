// Copyright 2026 The capzero Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "capzero/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "capzero/errors.hpp"

namespace capzero {

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

namespace {

bool is_special(std::string_view token) {
  return token == Vocab::kPadToken || token == Vocab::kBosToken ||
         token == Vocab::kEosToken;
}

}  // namespace

Vocab Vocab::build(std::span<const std::string> corpus) {
  if (corpus.empty()) throw ContractError("build_vocab: empty corpus");
  std::map<std::string, std::size_t, std::less<>> counts;
  for (const auto& doc : corpus) {
    for (auto& tok : split_whitespace(doc)) {
      if (is_special(tok)) {
        throw ContractError("build_vocab: corpus contains reserved token " + tok);
      }
      ++counts[tok];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(),
                                                           counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = {std::string(kPadToken),
                                     std::string(kBosToken),
                                     std::string(kEosToken)};
  for (auto& [tok, count] : ordered) tokens.push_back(tok);
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 3 || tokens[kPad] != kPadToken ||
      tokens[kBos] != kBosToken || tokens[kEos] != kEosToken) {
    throw ContractError("vocab must start with <pad> <bos> <eos>");
  }
  Vocab v;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty() ||
        tokens[i].find_first_of(" \t\r\n") != std::string::npos) {
      throw ContractError("vocab token " + std::to_string(i) +
                          " is empty or contains whitespace");
    }
    if (!v.ids_.emplace(tokens[i], static_cast<int>(i)).second) {
      throw ContractError("duplicate vocab token: " + tokens[i]);
    }
  }
  v.tokens_ = std::move(tokens);
  return v;
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids = {kBos};
  for (const auto& tok : split_whitespace(text)) {
    auto it = ids_.find(tok);
    if (it == ids_.end() || is_special(tok)) {
      throw OovError("out-of-vocabulary token '" + tok + "'");
    }
    ids.push_back(it->second);
  }
  ids.push_back(kEos);
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kBos || id == kEos || id == kPad) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

int Vocab::id(std::string_view token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) {
    throw OovError("out-of-vocabulary token '" + std::string(token) + "'");
  }
  return it->second;
}

bool Vocab::contains(std::string_view token) const {
  return ids_.find(token) != ids_.end();
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocab of " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write vocab: " + path.string());
  for (const auto& tok : tokens_) out << tok << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocab: " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

}  // namespace capzero
