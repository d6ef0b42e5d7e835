#include "ardx/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ardx {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

void save_arrays(const std::string& path, const NamedArrays& arrays) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    std::ostringstream head;
    head << "ARDX1\n";
    head << "arrays " << arrays.size() << "\n";
    size_t offset = 0;
    for (const auto& [name, t] : arrays) {
        if (name.find_first_of(" \n\t") != std::string::npos)
            throw std::invalid_argument("checkpoint: array name contains whitespace: " + name);
        head << name << " " << t.ndim();
        for (int d : t.shape) head << " " << d;
        head << " " << offset << "\n";
        offset += t.data.size() * sizeof(double);
    }
    head << "data\n";
    f << head.str();
    for (const auto& [name, t] : arrays)
        f.write(reinterpret_cast<const char*>(t.data.data()),
                std::streamsize(t.data.size() * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

NamedArrays load_arrays(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line != "ARDX1")
        throw std::runtime_error("checkpoint: bad magic in " + path);
    if (!std::getline(f, line)) throw std::runtime_error("checkpoint: truncated manifest");
    size_t count = 0;
    {
        std::istringstream is(line);
        std::string tag;
        is >> tag >> count;
        if (tag != "arrays" || !is) throw std::runtime_error("checkpoint: bad manifest header");
    }
    struct Entry {
        std::string name;
        Shape shape;
        size_t offset;
    };
    std::vector<Entry> entries;
    entries.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        if (!std::getline(f, line)) throw std::runtime_error("checkpoint: truncated manifest");
        std::istringstream is(line);
        Entry e;
        int nd = 0;
        is >> e.name >> nd;
        e.shape.resize(size_t(nd));
        for (int d = 0; d < nd; ++d) is >> e.shape[size_t(d)];
        is >> e.offset;
        if (!is) throw std::runtime_error("checkpoint: bad manifest line: " + line);
        entries.push_back(std::move(e));
    }
    if (!std::getline(f, line) || line != "data")
        throw std::runtime_error("checkpoint: missing data marker");
    const std::streampos data_start = f.tellg();
    NamedArrays out;
    out.reserve(entries.size());
    for (const Entry& e : entries) {
        Tensor t(e.shape);
        f.seekg(data_start + std::streampos(e.offset));
        f.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(t.data.size() * sizeof(double)));
        if (!f) throw std::runtime_error("checkpoint: truncated payload for array " + e.name);
        out.emplace_back(e.name, std::move(t));
    }
    return out;
}

const Tensor& find_array(const NamedArrays& arrays, const std::string& name) {
    for (const auto& [n, t] : arrays)
        if (n == name) return t;
    throw std::runtime_error("checkpoint: missing array " + name);
}

bool has_array(const NamedArrays& arrays, const std::string& name) {
    for (const auto& [n, t] : arrays)
        if (n == name) return true;
    return false;
}

} // namespace ardx
