#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <boost/crc.hpp>

#include "tijepa/errors.hpp"
#include "tijepa/tensor.hpp"

namespace tijepa {

inline constexpr char kCheckpointMagic[4] = {'T', 'I', 'J', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, u64 = 1, u8 = 2 };

// CRC-64/XZ (ECMA-182 polynomial, reflected, all-ones init and xor-out).
using Crc64 = boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, 0xFFFFFFFFFFFFFFFFULL, 0xFFFFFFFFFFFFFFFFULL, true, true>;

inline std::uint64_t crc64(std::string_view bytes) {
    Crc64 crc;
    crc.process_bytes(bytes.data(), bytes.size());
    return crc.checksum();
}

// Named tensors, kept sorted by name. Payloads are stored as raw
// little-endian bytes exactly as they appear on disk.
class TensorTable {
public:
    struct Entry {
        DType dtype = DType::f32;
        Shape shape;
        std::string payload;
        bool operator==(const Entry&) const = default;
    };

    void put(const std::string& name, const Tensor& t) {
        Entry e{DType::f32, t.shape(), {}};
        e.payload.resize(t.size() * 4);
        for (std::size_t i = 0; i < t.size(); ++i) store_le<std::uint32_t>(e.payload.data() + 4 * i, bits_of(t[i]));
        entries_[name] = std::move(e);
    }

    void put_u64(const std::string& name, const std::vector<std::uint64_t>& values) {
        Entry e{DType::u64, {values.size()}, {}};
        e.payload.resize(values.size() * 8);
        for (std::size_t i = 0; i < values.size(); ++i) store_le<std::uint64_t>(e.payload.data() + 8 * i, values[i]);
        entries_[name] = std::move(e);
    }

    void put_bytes(const std::string& name, std::string_view bytes) {
        entries_[name] = Entry{DType::u8, {bytes.size()}, std::string(bytes)};
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    const std::map<std::string, Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    const Entry& entry(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw FormatError("checkpoint has no tensor named '" + name + "'");
        return it->second;
    }

    Tensor get(const std::string& name) const {
        const auto& e = expect(name, DType::f32);
        std::vector<float> v(shape_size(e.shape));
        for (std::size_t i = 0; i < v.size(); ++i) {
            const auto b = load_le<std::uint32_t>(e.payload.data() + 4 * i);
            std::memcpy(&v[i], &b, 4);
        }
        return Tensor(e.shape, std::move(v));
    }

    std::vector<std::uint64_t> get_u64(const std::string& name) const {
        const auto& e = expect(name, DType::u64);
        std::vector<std::uint64_t> v(shape_size(e.shape));
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = load_le<std::uint64_t>(e.payload.data() + 8 * i);
        return v;
    }

    std::string get_bytes(const std::string& name) const { return expect(name, DType::u8).payload; }

    bool operator==(const TensorTable&) const = default;

    std::string encode() const {
        std::string out(kCheckpointMagic, 4);
        append_le<std::uint32_t>(out, kCheckpointVersion);
        append_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
        for (const auto& [name, e] : entries_) {
            append_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
            out += name;
            out.push_back(static_cast<char>(e.dtype));
            append_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
            for (auto d : e.shape) append_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
            out += e.payload;
        }
        append_le<std::uint64_t>(out, crc64(out));
        return out;
    }

    static TensorTable decode(std::string_view bytes) {
        if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
            throw FormatError("not a checkpoint: bad magic");
        }
        if (bytes.size() < 20) throw FormatError("checkpoint truncated");
        const std::string_view body = bytes.substr(0, bytes.size() - 8);
        const auto stored_crc = load_le<std::uint64_t>(bytes.data() + bytes.size() - 8);
        Reader r{body, 4};
        const auto version = r.u32();
        if (version != kCheckpointVersion) {
            throw FormatError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
        }
        if (crc64(body) != stored_crc) throw FormatError("checkpoint CRC mismatch (corrupted or truncated file)");
        TensorTable t;
        const auto count = r.u32();
        std::string prev;
        for (std::uint32_t i = 0; i < count; ++i) {
            const auto name_len = r.u32();
            std::string name(r.take(name_len));
            if (i > 0 && !(prev < name)) throw FormatError("checkpoint tensors not sorted by name at '" + name + "'");
            const auto tag = static_cast<std::uint8_t>(r.take(1)[0]);
            if (tag > static_cast<std::uint8_t>(DType::u8)) {
                throw FormatError("tensor '" + name + "' has unknown dtype tag " + std::to_string(tag));
            }
            Entry e;
            e.dtype = static_cast<DType>(tag);
            const auto rank = r.u32();
            for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.u32());
            const std::size_t width = e.dtype == DType::f32 ? 4 : (e.dtype == DType::u64 ? 8 : 1);
            e.payload = std::string(r.take(shape_size(e.shape) * width));
            t.entries_.emplace(name, std::move(e));
            prev = std::move(name);
        }
        if (r.pos != body.size()) throw FormatError("checkpoint has trailing bytes");
        return t;
    }

    void save(const std::filesystem::path& path) const {
        const auto bytes = encode();
        std::ofstream os(path, std::ios::binary);
        if (!os) throw FormatError("cannot write checkpoint " + path.string());
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw FormatError("failed writing checkpoint " + path.string());
    }

    static TensorTable load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw FormatError("cannot open checkpoint " + path.string());
        const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
        return decode(bytes);
    }

private:
    struct Reader {
        std::string_view data;
        std::size_t pos = 0;
        std::string_view take(std::size_t n) {
            if (n > data.size() - pos) throw FormatError("checkpoint truncated");
            auto s = data.substr(pos, n);
            pos += n;
            return s;
        }
        std::uint32_t u32() { return load_le<std::uint32_t>(take(4).data()); }
    };

    const Entry& expect(const std::string& name, DType dt) const {
        const auto& e = entry(name);
        if (e.dtype != dt) throw FormatError("tensor '" + name + "' has unexpected dtype");
        return e;
    }

    static std::uint32_t bits_of(float f) {
        std::uint32_t b;
        std::memcpy(&b, &f, 4);
        return b;
    }

    template <typename U>
    static void store_le(char* p, U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) p[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    }

    template <typename U>
    static void append_le(std::string& out, U v) {
        char buf[sizeof(U)];
        store_le(buf, v);
        out.append(buf, sizeof(U));
    }

    template <typename U>
    static U load_le(const char* p) {
        U v = 0;
        for (std::size_t i = sizeof(U); i-- > 0;) v = (v << 8) | static_cast<unsigned char>(p[i]);
        return v;
    }

    std::map<std::string, Entry> entries_;
};

// Writes every parameter of `module` under its visit name.
template <typename M>
void store_module(TensorTable& table, M& module, const std::string& prefix = "") {
    module.visit(prefix, [&table](const std::string& name, auto& t) { table.put(name, t); });
}

// Copies tensors back into `module`; every parameter must be present with
// a matching shape.
template <typename M>
void restore_module(const TensorTable& table, M& module, const std::string& prefix = "") {
    module.visit(prefix, [&table](const std::string& name, auto& t) {
        const auto src = table.get(name);
        if (src.shape() != t.shape()) {
            throw FormatError("tensor '" + name + "' has shape " + shape_str(src.shape()) + ", model expects " +
                              shape_str(t.shape()));
        }
        std::copy(src.data().begin(), src.data().end(), t.mutable_data().begin());
    });
}

} // namespace tijepa
