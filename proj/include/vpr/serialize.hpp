#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "vpr/tensor.hpp"

namespace vpr {

using RecordId = std::uint64_t;

// VPRT tensor file: magic "VPRT", u16 version=1, u16 ndims, ndims×u32 extents,
// payload f64 little-endian row-major. Round-trips byte-exactly.
void write_tensor_frame(std::ostream& os, const Tensor& t);
Tensor read_tensor_frame(std::istream& is);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// VPRC checkpoint: "VPRC", u16 version=1, then per parameter: u32 name length,
// name bytes, tensor in VPRT framing. Records ordered by name.
void save_checkpoint(const std::string& path,
                     std::vector<std::pair<std::string, Tensor>> named);
std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

// VPRD descriptor DB: "VPRD", u32 count, u32 dim, then per record u64 id and
// dim×f64 little-endian values.
struct DescriptorDb {
    std::vector<RecordId> ids;
    Eigen::MatrixXd vectors;  // one row per record
};
void save_descriptor_db(const std::string& path, const DescriptorDb& db);
DescriptorDb load_descriptor_db(const std::string& path);

}  // namespace vpr
