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
#include <string>

#include "capzero/autograd.hpp"

namespace capzero {

// Binary parameter checkpoint:
//   magic "CAPZCKPT" (8 bytes), version u32, parameter count u64, then per
//   parameter: name length u32, name bytes, rank u32, extents u64 x rank,
//   values f64 x product(extents). All integers and floats little-endian.
inline constexpr char kCheckpointMagic[9] = "CAPZCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const ParameterStore& params);
ParameterStore deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const ParameterStore& params,
                     const std::filesystem::path& path);
ParameterStore load_checkpoint(const std::filesystem::path& path);

}  // namespace capzero
