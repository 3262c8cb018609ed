#pragma once

#include <filesystem>
#include <string>

#include "dil/tensor.hpp"

namespace dil {

/// Binary PPM (P6, maxval 255). Values are written as round(v * 255) and read
/// back as byte / 255.
std::string encode_ppm(const Tensor& pixels);
Tensor decode_ppm(const std::string& bytes);

void write_ppm(const Tensor& pixels, const std::filesystem::path& path);
Tensor read_ppm(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace dil
