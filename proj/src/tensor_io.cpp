#include "trove/tensor_io.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "trove/common.hpp"

namespace trove {

namespace {

constexpr char kMagic[8] = {'T', 'R', 'V', 'T', 'N', 'S', 'R', '1'};

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw Error("truncated tensor container");
    return v;
}

std::uint64_t byte_size(const NamedTensor& t) {
    return static_cast<std::uint64_t>(t.values.size()) * (t.f64 ? 8 : 4);
}

}  // namespace

void write_tensors(const std::filesystem::path& file, const std::vector<NamedTensor>& tensors) {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw Error("cannot write " + file.string());
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, 1);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put<std::uint32_t>(os, t.f64 ? 2u : 1u);
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.values.rows()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.values.cols()));
        put<std::uint64_t>(os, offset);
        offset += byte_size(t);
    }
    for (const auto& t : tensors)
        for (Eigen::Index r = 0; r < t.values.rows(); ++r)
            for (Eigen::Index c = 0; c < t.values.cols(); ++c) {
                if (t.f64)
                    put<double>(os, t.values(r, c));
                else
                    put<float>(os, static_cast<float>(t.values(r, c)));
            }
    if (!os) throw Error("failed writing " + file.string());
}

std::vector<NamedTensor> read_tensors(const std::filesystem::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw Error("cannot open tensor file " + file.string());
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) throw Error("not a tensor file: " + file.string());
    if (get<std::uint32_t>(is) != 1) throw Error("unsupported tensor file version");
    const auto count = get<std::uint32_t>(is);
    std::vector<NamedTensor> out(count);
    for (auto& t : out) {
        const auto len = get<std::uint32_t>(is);
        t.name.resize(len);
        is.read(t.name.data(), len);
        const auto dtype = get<std::uint32_t>(is);
        if (dtype != 1 && dtype != 2) throw Error("unknown tensor dtype in " + file.string());
        t.f64 = dtype == 2;
        const auto rows = get<std::uint32_t>(is);
        const auto cols = get<std::uint32_t>(is);
        get<std::uint64_t>(is);  // offsets are implied by the index order
        t.values.resize(rows, cols);
    }
    for (auto& t : out)
        for (Eigen::Index r = 0; r < t.values.rows(); ++r)
            for (Eigen::Index c = 0; c < t.values.cols(); ++c)
                t.values(r, c) = t.f64 ? get<double>(is) : static_cast<double>(get<float>(is));
    return out;
}

const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw Error("tensor '" + name + "' not found");
}

std::string file_hash(const std::filesystem::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw Error("cannot open " + file.string());
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return hex64(fnv1a(bytes));
}

}  // namespace trove
