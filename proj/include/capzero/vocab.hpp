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

#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace capzero {

// Closed whitespace-token vocabulary. Ids 0..2 are the special tokens; the
// rest are ordered by descending corpus frequency, ties lexicographic.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kBosToken = "<bos>";
  static constexpr std::string_view kEosToken = "<eos>";

  Vocab() = default;

  static Vocab build(std::span<const std::string> corpus);
  // Restores a vocabulary from its id-ordered token list.
  static Vocab from_tokens(std::vector<std::string> tokens);

  // [BOS, ids..., EOS]. Unknown tokens raise OovError naming the token.
  std::vector<int> encode(std::string_view text) const;
  // Joins tokens with single spaces, dropping BOS/EOS/PAD.
  std::string decode(std::span<const int> ids) const;

  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> ids_;
};

std::vector<std::string> split_whitespace(std::string_view text);

}  // namespace capzero
