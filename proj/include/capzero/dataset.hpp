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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "capzero/vocab.hpp"

namespace capzero {

// Raster of shape [height, width, channels], row-major HWC, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  static Image zeros(std::size_t h, std::size_t w, std::size_t c) {
    return Image{h, w, c, std::vector<double>(h * w * c, 0.0)};
  }
  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

struct MultimodalExample {
  Image image;
  std::string caption;
  std::vector<int> tokens;  // BOS ... EOS; empty until encoded
  std::optional<int> class_id;
};

using Dataset = std::vector<MultimodalExample>;

// Raw raster file: 16-byte header of little-endian u32 (height, width,
// channels, magic) followed by height*width*channels little-endian f32.
inline constexpr std::uint32_t kRasterMagic = 0x52535A43;  // "CZSR"

void write_raster(const Image& image, const std::filesystem::path& path);
Image read_raster(const std::filesystem::path& path);

struct ImageExtents {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
};

// Reads a JSONL dataset: one {"image_path", "caption", "class_id"?} object
// per line, with image_path resolved relative to the file's directory. An
// optional "tokens" array must equal the encoded caption when a vocab is
// given. With a vocab every caption is encoded (OOV is an error). Errors
// name the 1-based line number.
Dataset load_jsonl(const std::filesystem::path& path,
                   const Vocab* vocab = nullptr,
                   std::optional<ImageExtents> expected = std::nullopt);

// Writes <dir>/<name>.jsonl and rasters under <dir>/images/.
void write_jsonl(const Dataset& data, const std::filesystem::path& dir,
                 const std::string& name);

// Re-encodes every caption with `vocab`.
void encode_captions(Dataset& data, const Vocab& vocab);

struct PromptEntry {
  int class_id = 0;
  int prompt_index = 0;
  std::string text;
  bool operator==(const PromptEntry&) const = default;
};

// Prompt table: one "class_id<TAB>prompt" line per entry. prompt_index is
// the entry's position among lines of the same class.
void write_prompt_table(const std::vector<PromptEntry>& prompts,
                        const std::filesystem::path& path);
std::vector<PromptEntry> read_prompt_table(const std::filesystem::path& path);

}  // namespace capzero
