#include "mbcr/archive.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

namespace mbcr {
namespace {

constexpr char kMagic[4] = {'M', 'B', 'C', 'R'};

template <class U>
void put_le(std::ostream& os, U value) {
    char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((value >> (8 * i)) & 0xff);
    os.write(buf, sizeof(U));
}

class Reader {
public:
    Reader(std::istream& is, const std::string& source) : is_(is), source_(source) {}

    template <class U>
    U le() {
        unsigned char buf[sizeof(U)];
        bytes(reinterpret_cast<char*>(buf), sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
        return v;
    }

    void bytes(char* dst, std::size_t n) {
        if (!is_.read(dst, static_cast<std::streamsize>(n)))
            throw Error("truncated archive '" + source_ + "'");
    }

    std::string string(std::size_t n) {
        std::string s(n, '\0');
        if (n) bytes(s.data(), n);
        return s;
    }

private:
    std::istream& is_;
    const std::string& source_;
};

}  // namespace

void TensorArchive::write(std::ostream& os) const {
    os.write(kMagic, 4);
    put_le<std::uint32_t>(os, kVersion);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(meta.size()));
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put_le<std::uint64_t>(os, tensors.size());
    for (const auto& [name, t] : tensors) {
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t e : t.shape) put_le<std::uint64_t>(os, e);
        for (double v : t.data) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
    }
}

TensorArchive TensorArchive::read(std::istream& is, const std::string& source) {
    Reader r(is, source);
    char magic[4] = {};
    if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kMagic))
        throw Error("bad magic in '" + source + "'");
    const auto version = r.le<std::uint32_t>();
    if (version != kVersion)
        throw Error("unsupported format version " + std::to_string(version) + " in '" + source + "'");
    TensorArchive a;
    a.meta = r.string(r.le<std::uint32_t>());
    const auto count = r.le<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = r.string(r.le<std::uint32_t>());
        const auto rank = r.le<std::uint32_t>();
        if (rank > 16) throw Error("corrupt tensor rank in '" + source + "'");
        Shape shape(rank);
        for (auto& e : shape) e = r.le<std::uint64_t>();
        Tensor t(shape);
        for (double& v : t.data) v = std::bit_cast<double>(r.le<std::uint64_t>());
        a.tensors.emplace_back(std::move(name), std::move(t));
    }
    return a;
}

void TensorArchive::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write '" + path.string() + "'");
    write(os);
    if (!os) throw Error("write failed for '" + path.string() + "'");
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open '" + path.string() + "'");
    return read(is, path.string());
}

const Tensor& TensorArchive::at(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw Error("archive has no tensor '" + name + "'");
}

TensorArchive to_archive(Model& model) {
    TensorArchive a;
    a.meta = "kind=checkpoint\n" + model.spec().to_text();
    for (Parameter* p : model.parameters()) a.tensors.emplace_back(p->name, p->value);
    for (const NamedStats& s : model.running_stats()) {
        const std::size_t c = s.stats->running_mean.size();
        a.tensors.emplace_back(s.name + "/running_mean", Tensor(Shape{c}, s.stats->running_mean));
        a.tensors.emplace_back(s.name + "/running_var", Tensor(Shape{c}, s.stats->running_var));
    }
    return a;
}

Model from_archive(const TensorArchive& a) {
    if (a.meta.rfind("kind=checkpoint\n", 0) != 0) throw Error("archive is not a model checkpoint");
    Model model = Model::build(ModelSpec::from_text(a.meta), 0);
    auto take = [&](const std::string& name, const Shape& shape) -> const Tensor& {
        const Tensor& t = a.at(name);
        if (t.shape != shape)
            throw Error("checkpoint tensor '" + name + "' has shape " + to_string(t.shape) + ", expected " +
                        to_string(shape));
        return t;
    };
    for (Parameter* p : model.parameters()) p->value = take(p->name, p->value.shape);
    for (const NamedStats& s : model.running_stats()) {
        const Shape shape{s.stats->running_mean.size()};
        s.stats->running_mean = take(s.name + "/running_mean", shape).data;
        s.stats->running_var = take(s.name + "/running_var", shape).data;
    }
    return model;
}

void save_checkpoint(Model& model, const std::filesystem::path& path) { to_archive(model).save(path); }

Model load_checkpoint(const std::filesystem::path& path) { return from_archive(TensorArchive::load(path)); }

}  // namespace mbcr
