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

#include "capzero/dataset.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "capzero/binary_io.hpp"
#include "capzero/errors.hpp"

namespace capzero {

namespace fs = std::filesystem;

void write_raster(const Image& image, const fs::path& path) {
  if (image.pixels.size() != image.height * image.width * image.channels) {
    throw ContractError("image pixel count does not match its extents");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write raster: " + path.string());
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(image.height));
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(image.width));
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(image.channels));
  binary::write_le<std::uint32_t>(out, kRasterMagic);
  for (double v : image.pixels) binary::write_le<float>(out, static_cast<float>(v));
  if (!out) throw IoError("failed writing raster: " + path.string());
}

Image read_raster(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing image file: " + path.string());
  try {
    Image img;
    img.height = binary::read_le<std::uint32_t>(in, "raster height");
    img.width = binary::read_le<std::uint32_t>(in, "raster width");
    img.channels = binary::read_le<std::uint32_t>(in, "raster channels");
    if (binary::read_le<std::uint32_t>(in, "raster magic") != kRasterMagic) {
      throw ParseError("bad raster magic");
    }
    if (img.height == 0 || img.width == 0 || img.channels == 0) {
      throw ParseError("raster has a zero extent");
    }
    img.pixels.resize(img.height * img.width * img.channels);
    for (double& v : img.pixels) {
      v = binary::read_le<float>(in, "raster pixels");
      if (!(v >= 0.0 && v <= 1.0)) throw ParseError("pixel outside [0, 1]");
    }
    return img;
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

Dataset load_jsonl(const fs::path& path, const Vocab* vocab,
                   std::optional<ImageExtents> expected) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset: " + path.string());
  const fs::path base = path.parent_path();
  Dataset data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ": line " + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object() || !obj.contains("image_path") ||
        !obj["image_path"].is_string() || !obj.contains("caption") ||
        !obj["caption"].is_string()) {
      throw ParseError(where + ": expected string fields image_path and caption");
    }
    MultimodalExample ex;
    ex.caption = obj["caption"].get<std::string>();
    if (obj.contains("class_id") && !obj["class_id"].is_null()) {
      if (!obj["class_id"].is_number_integer() || obj["class_id"].get<long long>() < 0) {
        throw ParseError(where + ": class_id must be a non-negative integer");
      }
      ex.class_id = obj["class_id"].get<int>();
    }
    if (vocab != nullptr) {
      try {
        ex.tokens = vocab->encode(ex.caption);
      } catch (const OovError& e) {
        throw ParseError(where + ": " + e.what());
      }
    }
    if (obj.contains("tokens")) {
      if (!obj["tokens"].is_array()) {
        throw ParseError(where + ": tokens must be an integer array");
      }
      std::vector<int> ids;
      for (const auto& t : obj["tokens"]) {
        if (!t.is_number_integer()) {
          throw ParseError(where + ": tokens must be an integer array");
        }
        const long long id = t.get<long long>();
        if (id < 0 || (vocab != nullptr && id >= static_cast<long long>(vocab->size()))) {
          throw ParseError(where + ": bad token id " + std::to_string(id));
        }
        ids.push_back(static_cast<int>(id));
      }
      if (ids.size() < 2 || ids.front() != Vocab::kBos || ids.back() != Vocab::kEos) {
        throw ParseError(where + ": tokens must start with BOS and end with EOS");
      }
      if (vocab != nullptr && ids != ex.tokens) {
        throw ParseError(where + ": tokens disagree with the encoded caption");
      }
      ex.tokens = std::move(ids);
    }
    const fs::path image_path = base / obj["image_path"].get<std::string>();
    if (!fs::exists(image_path)) {
      throw IoError(where + ": missing image file " + image_path.string());
    }
    try {
      ex.image = read_raster(image_path);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (expected && (ex.image.height != expected->height ||
                     ex.image.width != expected->width ||
                     ex.image.channels != expected->channels)) {
      throw ParseError(where + ": image extents do not match the dataset config");
    }
    data.push_back(std::move(ex));
  }
  return data;
}

void write_jsonl(const Dataset& data, const fs::path& dir,
                 const std::string& name) {
  fs::create_directories(dir / "images");
  std::ofstream out(dir / (name + ".jsonl"), std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / (name + ".jsonl")).string());
  const int width = std::max<int>(5, static_cast<int>(std::to_string(data.size()).size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::ostringstream file;
    file << "images/" << name << '_' << std::setw(width) << std::setfill('0') << i
         << ".raw";
    write_raster(data[i].image, dir / file.str());
    nlohmann::json obj;
    obj["image_path"] = file.str();
    obj["caption"] = data[i].caption;
    if (data[i].class_id) obj["class_id"] = *data[i].class_id;
    out << obj.dump() << '\n';
  }
}

void encode_captions(Dataset& data, const Vocab& vocab) {
  for (auto& ex : data) ex.tokens = vocab.encode(ex.caption);
}

void write_prompt_table(const std::vector<PromptEntry>& prompts,
                        const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write prompt table: " + path.string());
  for (const auto& p : prompts) out << p.class_id << '\t' << p.text << '\n';
}

std::vector<PromptEntry> read_prompt_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open prompt table: " + path.string());
  std::vector<PromptEntry> prompts;
  std::map<int, int> next_index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const std::string where = path.string() + ": line " + std::to_string(line_no);
    if (tab == std::string::npos) throw ParseError(where + ": missing tab");
    PromptEntry entry;
    try {
      std::size_t used = 0;
      entry.class_id = std::stoi(line.substr(0, tab), &used);
      if (used != tab || entry.class_id < 0) throw std::invalid_argument("id");
    } catch (const std::exception&) {
      throw ParseError(where + ": bad class id");
    }
    entry.text = line.substr(tab + 1);
    entry.prompt_index = next_index[entry.class_id]++;
    prompts.push_back(std::move(entry));
  }
  return prompts;
}

}  // namespace capzero
