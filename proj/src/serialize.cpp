#include "vpr/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "vpr/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts are unsupported");

namespace vpr {

namespace {

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError(std::string("truncated stream while reading ") + what);
    return v;
}

void put_magic(std::ostream& os, const char m[4]) { os.write(m, 4); }

void expect_magic(std::istream& is, const char m[4], const char* name) {
    char buf[4];
    is.read(buf, 4);
    if (!is || std::memcmp(buf, m, 4) != 0)
        throw IoError(std::string("bad magic, expected ") + name);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    return is;
}

}  // namespace

void write_tensor_frame(std::ostream& os, const Tensor& t) {
    put_magic(os, "VPRT");
    put<std::uint16_t>(os, 1);
    put<std::uint16_t>(os, static_cast<std::uint16_t>(t.ndim()));
    for (int e : t.shape()) put<std::uint32_t>(os, static_cast<std::uint32_t>(e));
    os.write(reinterpret_cast<const char*>(t.array().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor_frame(std::istream& is) {
    expect_magic(is, "VPRT", "VPRT");
    const auto version = get<std::uint16_t>(is, "VPRT version");
    if (version != 1) throw IoError("unsupported VPRT version " + std::to_string(version));
    const auto ndims = get<std::uint16_t>(is, "VPRT ndims");
    Shape shape(ndims);
    for (auto& e : shape) e = static_cast<int>(get<std::uint32_t>(is, "VPRT extent"));
    Array data(numel(shape));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw IoError("truncated VPRT payload");
    return Tensor::from_array(shape, std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
    auto os = open_out(path);
    write_tensor_frame(os, t);
    if (!os) throw IoError("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
    auto is = open_in(path);
    return read_tensor_frame(is);
}

void save_checkpoint(const std::string& path,
                     std::vector<std::pair<std::string, Tensor>> named) {
    std::sort(named.begin(), named.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    auto os = open_out(path);
    put_magic(os, "VPRC");
    put<std::uint16_t>(os, 1);
    for (const auto& [name, tensor] : named) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor_frame(os, tensor);
    }
    if (!os) throw IoError("write failed: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
    auto is = open_in(path);
    expect_magic(is, "VPRC", "VPRC");
    const auto version = get<std::uint16_t>(is, "VPRC version");
    if (version != 1) throw IoError("unsupported VPRC version " + std::to_string(version));
    std::vector<std::pair<std::string, Tensor>> out;
    while (true) {
        std::uint32_t len{};
        is.read(reinterpret_cast<char*>(&len), sizeof(len));
        if (is.eof()) break;
        if (!is) throw IoError("truncated VPRC record header");
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (!is) throw IoError("truncated VPRC record name");
        out.emplace_back(std::move(name), read_tensor_frame(is));
    }
    return out;
}

void save_descriptor_db(const std::string& path, const DescriptorDb& db) {
    if (db.vectors.rows() != static_cast<Eigen::Index>(db.ids.size()))
        throw DimensionError("descriptor db: id/vector count mismatch");
    auto os = open_out(path);
    put_magic(os, "VPRD");
    put<std::uint32_t>(os, static_cast<std::uint32_t>(db.ids.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(db.vectors.cols()));
    for (std::size_t r = 0; r < db.ids.size(); ++r) {
        put<std::uint64_t>(os, db.ids[r]);
        for (Eigen::Index c = 0; c < db.vectors.cols(); ++c)
            put<double>(os, db.vectors(static_cast<Eigen::Index>(r), c));
    }
    if (!os) throw IoError("write failed: " + path);
}

DescriptorDb load_descriptor_db(const std::string& path) {
    auto is = open_in(path);
    expect_magic(is, "VPRD", "VPRD");
    const auto count = get<std::uint32_t>(is, "VPRD count");
    const auto dim = get<std::uint32_t>(is, "VPRD dim");
    DescriptorDb db;
    db.ids.resize(count);
    db.vectors.resize(count, dim);
    for (std::uint32_t r = 0; r < count; ++r) {
        db.ids[r] = get<std::uint64_t>(is, "VPRD id");
        for (std::uint32_t c = 0; c < dim; ++c)
            db.vectors(r, c) = get<double>(is, "VPRD value");
    }
    return db;
}

}  // namespace vpr
