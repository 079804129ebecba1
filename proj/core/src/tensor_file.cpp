#include "cfp/tensor_file.hpp"

#include <cstring>
#include <fstream>

namespace cfp::io {

namespace {

constexpr char kTensorMagic[4] = {'C', 'F', 'T', '1'};
constexpr char kParamsMagic[4] = {'C', 'F', 'M', '1'};
constexpr std::uint8_t kDtypeF32 = 0;

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

    std::size_t remaining() const { return bytes_.size() - pos_; }

    const char* take(std::size_t n, const char* what) {
        if (remaining() < n)
            throw FormatError(FormatError::Code::truncated,
                              origin_ + ": needs " + std::to_string(n) + " more bytes for " + what);
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(*take(1, what)); }

    std::uint32_t u32(const char* what) {
        const char* p = take(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
        return v;
    }

    std::uint64_t u64(const char* what) {
        const char* p = take(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
        return v;
    }

    const std::string& origin() const { return origin_; }

private:
    const std::string& bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatError::Code::io, "cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw FormatError(FormatError::Code::io, "read failed for " + path.string());
    return bytes;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError(FormatError::Code::io, "cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw FormatError(FormatError::Code::io, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw FormatError(FormatError::Code::io, "rename to " + path.string() + " failed: " + ec.message());
    }
}

Tensor decode_tensor_impl(Reader& r) {
    const char* magic = r.take(4, "magic");
    if (std::memcmp(magic, kTensorMagic, 4) != 0)
        throw FormatError(FormatError::Code::bad_magic, r.origin() + ": not a CFT1 tensor file");
    std::uint8_t dtype = r.u8("dtype");
    if (dtype != kDtypeF32)
        throw FormatError(FormatError::Code::bad_dtype,
                          r.origin() + ": dtype code " + std::to_string(dtype) + " unsupported");
    std::uint8_t ndim = r.u8("ndim");
    Shape shape;
    std::uint64_t numel = 1;
    for (int i = 0; i < ndim; ++i) {
        std::uint32_t d = r.u32("dims");
        if (d == 0) throw FormatError(FormatError::Code::bad_header, r.origin() + ": zero-sized dimension");
        shape.push_back(static_cast<std::int64_t>(d));
        numel *= d;
    }
    const char* payload = r.take(static_cast<std::size_t>(4 * numel), "payload");
    std::vector<float> data(static_cast<std::size_t>(numel));
    for (std::uint64_t i = 0; i < numel; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[4 * i + b])) << (8 * b);
        float f;
        std::memcpy(&f, &bits, 4);
        data[static_cast<std::size_t>(i)] = f;
    }
    if (ndim == 0) shape.push_back(1), data.resize(1); // scalar files are stored with ndim 0
    return Tensor(std::move(shape), std::move(data));
}

} // namespace

std::string encode_tensor(const Tensor& t) {
    std::string out;
    out.append(kTensorMagic, 4);
    out.push_back(static_cast<char>(kDtypeF32));
    if (t.rank() > 255) throw FormatError(FormatError::Code::bad_header, "rank > 255 unsupported");
    out.push_back(static_cast<char>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) {
        if (t.dim(i) > 0xffffffffLL)
            throw FormatError(FormatError::Code::bad_header, "dimension too large for u32");
        append_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    }
    for (float f : t.data()) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        append_u32(out, bits);
    }
    return out;
}

Tensor decode_tensor(const std::string& bytes) {
    Reader r(bytes, "<memory>");
    return decode_tensor_impl(r);
}

Tensor read_tensor(const std::filesystem::path& path) {
    std::string bytes = read_file(path);
    Reader r(bytes, path.string());
    Tensor t = decode_tensor_impl(r);
    if (r.remaining() != 0)
        throw FormatError(FormatError::Code::bad_header,
                          path.string() + ": " + std::to_string(r.remaining()) + " trailing bytes");
    return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
    write_file_atomic(path, encode_tensor(t));
}

void save_params(const std::filesystem::path& path, const ModuleParams& params) {
    std::string out;
    out.append(kParamsMagic, 4);
    append_u32(out, static_cast<std::uint32_t>(params.entries.size()));
    for (const auto& e : params.entries) {
        append_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out.append(e.name);
        std::string blob = encode_tensor(*e.tensor);
        append_u64(out, blob.size());
        out.append(blob);
    }
    write_file_atomic(path, out);
}

void load_params(const std::filesystem::path& path, ModuleParams& params) {
    std::string bytes = read_file(path);
    Reader r(bytes, path.string());
    const char* magic = r.take(4, "magic");
    if (std::memcmp(magic, kParamsMagic, 4) != 0)
        throw FormatError(FormatError::Code::bad_magic, path.string() + ": not a CFM1 parameter file");
    std::uint32_t count = r.u32("entry count");
    if (count != params.entries.size())
        throw FormatError(FormatError::Code::bad_manifest,
                          path.string() + ": has " + std::to_string(count) + " entries, module expects " +
                              std::to_string(params.entries.size()));
    std::vector<bool> seen(params.entries.size(), false);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = r.u32("name length");
        std::string name(r.take(name_len, "name"), name_len);
        std::uint64_t blob_len = r.u64("blob length");
        std::string blob(r.take(static_cast<std::size_t>(blob_len), "tensor blob"),
                         static_cast<std::size_t>(blob_len));
        Tensor t = decode_tensor(blob);
        bool matched = false;
        for (std::size_t j = 0; j < params.entries.size(); ++j) {
            if (params.entries[j].name != name) continue;
            if (seen[j])
                throw FormatError(FormatError::Code::bad_manifest, path.string() + ": duplicate entry " + name);
            if (t.shape() != params.entries[j].tensor->shape())
                throw FormatError(FormatError::Code::bad_manifest,
                                  path.string() + ": " + name + " has shape " + shape_str(t.shape()) +
                                      ", module expects " + shape_str(params.entries[j].tensor->shape()));
            *params.entries[j].tensor = std::move(t);
            seen[j] = matched = true;
            break;
        }
        if (!matched)
            throw FormatError(FormatError::Code::bad_manifest, path.string() + ": unknown entry " + name);
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
    write_file_atomic(path, contents);
}

} // namespace cfp::io
