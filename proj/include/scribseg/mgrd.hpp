#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "scribseg/grid.hpp"

namespace scribseg::mgrd {

// Layout: "MGRD", version 0x01, dtype byte, ndim byte, ndim x u32 LE dims,
// row-major payload (u8, or f32 little-endian).
inline constexpr std::uint8_t kVersion = 0x01;

enum class DType : std::uint8_t { u8 = 0x01, f32 = 0x02 };

struct Array {
    DType dtype = DType::u8;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> u8;
    std::vector<float> f32;

    std::size_t element_count() const;
    bool operator==(const Array&) const = default;
};

std::vector<std::uint8_t> encode(const Array& a);
Array decode(const std::vector<std::uint8_t>& bytes);

void write(const std::filesystem::path& path, const Array& a);
Array read(const std::filesystem::path& path);

void save_labels(const std::filesystem::path& path, const Grid<std::uint8_t>& g);
Grid<std::uint8_t> load_labels(const std::filesystem::path& path);

void save_image(const std::filesystem::path& path, const Grid<float>& g);
ImageGrid load_image(const std::filesystem::path& path);

/// 3D f32 stack (channels x height x width), e.g. CPL maps or a patch mask.
void save_stack(const std::filesystem::path& path, int channels, int height, int width, const std::vector<float>& data);

}  // namespace scribseg::mgrd
