#include "scribseg/mgrd.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace scribseg::mgrd {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::size_t Array::element_count() const {
    if (dims.empty()) return 0;
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

std::vector<std::uint8_t> encode(const Array& a) {
    const std::size_t n = a.element_count();
    if ((a.dtype == DType::u8 && a.u8.size() != n) || (a.dtype == DType::f32 && a.f32.size() != n))
        throw DataError("MGRD payload size does not match dims");
    if (a.dims.size() > 255) throw DataError("MGRD supports at most 255 dims");
    std::vector<std::uint8_t> out{'M', 'G', 'R', 'D', kVersion, static_cast<std::uint8_t>(a.dtype),
                                  static_cast<std::uint8_t>(a.dims.size())};
    for (auto d : a.dims) put_u32(out, d);
    if (a.dtype == DType::u8) {
        out.insert(out.end(), a.u8.begin(), a.u8.end());
    } else {
        out.reserve(out.size() + 4 * n);
        for (float f : a.f32) put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

Array decode(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 7) throw DataError("MGRD: file too short for header");
    if (std::memcmp(bytes.data(), "MGRD", 4) != 0) throw DataError("MGRD: bad magic");
    if (bytes[4] != kVersion) throw DataError("MGRD: unsupported version " + std::to_string(bytes[4]));
    Array a;
    if (bytes[5] != 0x01 && bytes[5] != 0x02) throw DataError("MGRD: unknown dtype " + std::to_string(bytes[5]));
    a.dtype = static_cast<DType>(bytes[5]);
    const std::size_t ndim = bytes[6];
    if (bytes.size() < 7 + 4 * ndim) throw DataError("MGRD: truncated dims");
    for (std::size_t i = 0; i < ndim; ++i) a.dims.push_back(get_u32(bytes.data() + 7 + 4 * i));
    const std::size_t n = a.element_count();
    const std::size_t offset = 7 + 4 * ndim;
    const std::size_t width = a.dtype == DType::u8 ? 1 : 4;
    if (bytes.size() != offset + n * width)
        throw DataError("MGRD: payload is " + std::to_string(bytes.size() - offset) + " bytes, expected " +
                        std::to_string(n * width));
    if (a.dtype == DType::u8) {
        a.u8.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
    } else {
        a.f32.resize(n);
        for (std::size_t i = 0; i < n; ++i) a.f32[i] = std::bit_cast<float>(get_u32(bytes.data() + offset + 4 * i));
    }
    return a;
}

void write(const std::filesystem::path& path, const Array& a) {
    const auto bytes = encode(a);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

Array read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode(bytes);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void save_labels(const std::filesystem::path& path, const Grid<std::uint8_t>& g) {
    write(path, Array{DType::u8, {static_cast<std::uint32_t>(g.height), static_cast<std::uint32_t>(g.width)}, g.data, {}});
}

Grid<std::uint8_t> load_labels(const std::filesystem::path& path) {
    Array a = read(path);
    if (a.dtype != DType::u8 || a.dims.size() != 2) throw DataError(path.string() + ": expected a 2D u8 label grid");
    Grid<std::uint8_t> g(static_cast<int>(a.dims[0]), static_cast<int>(a.dims[1]));
    g.data = std::move(a.u8);
    return g;
}

void save_image(const std::filesystem::path& path, const Grid<float>& g) {
    write(path, Array{DType::f32, {static_cast<std::uint32_t>(g.height), static_cast<std::uint32_t>(g.width)}, {}, g.data});
}

ImageGrid load_image(const std::filesystem::path& path) {
    Array a = read(path);
    if (a.dtype != DType::f32 || a.dims.size() != 2) throw DataError(path.string() + ": expected a 2D f32 image");
    Grid<float> g(static_cast<int>(a.dims[0]), static_cast<int>(a.dims[1]));
    g.data = std::move(a.f32);
    return ImageGrid(std::move(g));
}

void save_stack(const std::filesystem::path& path, int channels, int height, int width, const std::vector<float>& data) {
    write(path, Array{DType::f32,
                      {static_cast<std::uint32_t>(channels), static_cast<std::uint32_t>(height),
                       static_cast<std::uint32_t>(width)},
                      {},
                      data});
}

}  // namespace scribseg::mgrd
