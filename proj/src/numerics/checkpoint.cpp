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

#include "capzero/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "capzero/binary_io.hpp"
#include "capzero/errors.hpp"

namespace capzero {

namespace {

void write_params(std::ostream& out, const ParameterStore& params) {
  out.write(kCheckpointMagic, 8);
  binary::write_le<std::uint32_t>(out, kCheckpointVersion);
  binary::write_le<std::uint64_t>(out, params.size());
  for (const Parameter& p : params) {
    binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t extent : p.value.shape()) {
      binary::write_le<std::uint64_t>(out, extent);
    }
    for (double v : p.value.values()) binary::write_le<double>(out, v);
  }
}

ParameterStore read_params(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::string(magic, 8) != kCheckpointMagic) {
    throw ParseError("not a capzero checkpoint (bad magic)");
  }
  const auto version = binary::read_le<std::uint32_t>(in, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = binary::read_le<std::uint64_t>(in, "parameter count");
  ParameterStore params;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = binary::read_le<std::uint32_t>(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) {
      throw ParseError("truncated parameter name");
    }
    const auto rank = binary::read_le<std::uint32_t>(in, "rank of " + name);
    if (rank == 0 || rank > 8) {
      throw ParseError("implausible rank " + std::to_string(rank) + " for " + name);
    }
    Shape shape(rank);
    for (auto& extent : shape) {
      extent = binary::read_le<std::uint64_t>(in, "extent of " + name);
    }
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = binary::read_le<double>(in, "values of " + name);
    params.add(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return params;
}

}  // namespace

std::string serialize_checkpoint(const ParameterStore& params) {
  std::ostringstream out(std::ios::binary);
  write_params(out, params);
  return out.str();
}

ParameterStore deserialize_checkpoint(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_params(in);
}

void save_checkpoint(const ParameterStore& params,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  write_params(out, params);
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

ParameterStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  try {
    return read_params(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace capzero
