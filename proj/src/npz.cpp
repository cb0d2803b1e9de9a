#include "tilesemi/npz.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tilesemi::npz {

template <> const char* dtype_of<float>() { return "<f4"; }
template <> const char* dtype_of<double>() { return "<f8"; }
template <> const char* dtype_of<std::int32_t>() { return "<i4"; }
template <> const char* dtype_of<std::int64_t>() { return "<i8"; }
template <> const char* dtype_of<std::uint64_t>() { return "<u8"; }

namespace {

std::string npy_header(const Array& a) {
    std::ostringstream shape;
    shape << "(";
    for (std::size_t i = 0; i < a.shape.size(); ++i) shape << a.shape[i] << ", ";
    shape << ")";
    std::string dict = "{'descr': '" + a.dtype + "', 'fortran_order': False, 'shape': " +
                       shape.str() + ", }";
    std::string out = "\x93NUMPY";
    out += '\x01';
    out += '\x00';
    // pad so the full header ends on a 64-byte boundary, newline terminated
    std::size_t base = out.size() + 2 + dict.size() + 1;
    const std::size_t pad = (64 - base % 64) % 64;
    dict += std::string(pad, ' ');
    dict += '\n';
    const auto hlen = static_cast<std::uint16_t>(dict.size());
    out += static_cast<char>(hlen & 0xff);
    out += static_cast<char>(hlen >> 8);
    out += dict;
    return out;
}

void put_u16(std::string& s, std::uint16_t v) {
    s += static_cast<char>(v & 0xff);
    s += static_cast<char>((v >> 8) & 0xff);
}
void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s += static_cast<char>((v >> (8 * i)) & 0xff);
}

std::uint16_t get_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

Array parse_npy(const std::uint8_t* p, std::size_t size) {
    if (size < 10 || std::memcmp(p, "\x93NUMPY", 6) != 0)
        throw std::runtime_error("npz: bad npy magic");
    const std::uint16_t hlen = get_u16(p + 8);
    const std::string header(reinterpret_cast<const char*>(p + 10), hlen);
    Array a;

    const auto descr_pos = header.find("'descr':");
    auto q1 = header.find('\'', descr_pos + 8);
    auto q2 = header.find('\'', q1 + 1);
    a.dtype = header.substr(q1 + 1, q2 - q1 - 1);

    const auto shape_pos = header.find("'shape':");
    auto p1 = header.find('(', shape_pos);
    auto p2 = header.find(')', p1);
    std::string inner = header.substr(p1 + 1, p2 - p1 - 1);
    std::istringstream is(inner);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        const auto first = tok.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        a.shape.push_back(std::stoll(tok.substr(first)));
    }
    if (header.find("'fortran_order': True") != std::string::npos)
        throw std::runtime_error("npz: fortran order not supported");

    const std::size_t off = 10 + hlen;
    a.data.assign(p + off, p + size);
    return a;
}

}  // namespace

void save(const std::string& path, const Archive& archive) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("npz: cannot write " + path);

    struct Entry {
        std::string name;
        std::uint32_t crc, size, offset;
    };
    std::vector<Entry> entries;
    std::uint32_t offset = 0;

    for (const auto& [key, array] : archive) {
        const std::string name = key + ".npy";
        std::string payload = npy_header(array);
        payload.append(reinterpret_cast<const char*>(array.data.data()), array.data.size());
        const auto crc = static_cast<std::uint32_t>(
            crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
                  static_cast<uInt>(payload.size())));

        std::string local;
        put_u32(local, 0x04034b50);
        put_u16(local, 20);      // version needed
        put_u16(local, 0);       // flags
        put_u16(local, 0);       // method: store
        put_u16(local, 0);       // mod time
        put_u16(local, 0);       // mod date
        put_u32(local, crc);
        put_u32(local, static_cast<std::uint32_t>(payload.size()));
        put_u32(local, static_cast<std::uint32_t>(payload.size()));
        put_u16(local, static_cast<std::uint16_t>(name.size()));
        put_u16(local, 0);       // extra len
        local += name;

        out.write(local.data(), static_cast<std::streamsize>(local.size()));
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        entries.push_back({name, crc, static_cast<std::uint32_t>(payload.size()), offset});
        offset += static_cast<std::uint32_t>(local.size() + payload.size());
    }

    const std::uint32_t central_start = offset;
    std::uint32_t central_size = 0;
    for (const auto& e : entries) {
        std::string rec;
        put_u32(rec, 0x02014b50);
        put_u16(rec, 20);  // version made by
        put_u16(rec, 20);  // version needed
        put_u16(rec, 0);
        put_u16(rec, 0);
        put_u16(rec, 0);
        put_u16(rec, 0);
        put_u32(rec, e.crc);
        put_u32(rec, e.size);
        put_u32(rec, e.size);
        put_u16(rec, static_cast<std::uint16_t>(e.name.size()));
        put_u16(rec, 0);
        put_u16(rec, 0);
        put_u16(rec, 0);
        put_u16(rec, 0);
        put_u32(rec, 0);
        put_u32(rec, e.offset);
        rec += e.name;
        out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
        central_size += static_cast<std::uint32_t>(rec.size());
    }

    std::string eocd;
    put_u32(eocd, 0x06054b50);
    put_u16(eocd, 0);
    put_u16(eocd, 0);
    put_u16(eocd, static_cast<std::uint16_t>(entries.size()));
    put_u16(eocd, static_cast<std::uint16_t>(entries.size()));
    put_u32(eocd, central_size);
    put_u32(eocd, central_start);
    put_u16(eocd, 0);
    out.write(eocd.data(), static_cast<std::streamsize>(eocd.size()));
    if (!out) throw std::runtime_error("npz: write failure for " + path);
}

Archive load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("npz: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 22) throw std::runtime_error("npz: truncated file " + path);

    // locate the end-of-central-directory record
    std::size_t eocd = std::string::npos;
    for (std::size_t i = bytes.size() - 22; ; --i) {
        if (get_u32(&bytes[i]) == 0x06054b50) {
            eocd = i;
            break;
        }
        if (i == 0) break;
    }
    if (eocd == std::string::npos) throw std::runtime_error("npz: no central directory in " + path);

    const std::uint16_t count = get_u16(&bytes[eocd + 10]);
    std::size_t pos = get_u32(&bytes[eocd + 16]);

    Archive archive;
    for (std::uint16_t e = 0; e < count; ++e) {
        if (get_u32(&bytes[pos]) != 0x02014b50) throw std::runtime_error("npz: bad central record");
        const std::uint16_t method = get_u16(&bytes[pos + 10]);
        const std::uint32_t size = get_u32(&bytes[pos + 24]);
        const std::uint16_t name_len = get_u16(&bytes[pos + 28]);
        const std::uint16_t extra_len = get_u16(&bytes[pos + 30]);
        const std::uint16_t comment_len = get_u16(&bytes[pos + 32]);
        const std::uint32_t local_off = get_u32(&bytes[pos + 42]);
        std::string name(reinterpret_cast<const char*>(&bytes[pos + 46]), name_len);
        if (method != 0) throw std::runtime_error("npz: compressed members not supported");

        // local header carries its own name/extra lengths
        const std::uint16_t lname = get_u16(&bytes[local_off + 26]);
        const std::uint16_t lextra = get_u16(&bytes[local_off + 28]);
        const std::size_t data_off = local_off + 30u + lname + lextra;

        if (name.size() > 4 && name.substr(name.size() - 4) == ".npy")
            name = name.substr(0, name.size() - 4);
        archive[name] = parse_npy(&bytes[data_off], size);
        pos += 46u + name_len + extra_len + comment_len;
    }
    return archive;
}

Array from_scalar_u64(std::uint64_t v) {
    Array a;
    a.dtype = "<u8";
    a.shape = {};
    a.data.resize(8);
    std::memcpy(a.data.data(), &v, 8);
    return a;
}

std::uint64_t to_scalar_u64(const Array& a) {
    std::uint64_t v = 0;
    std::memcpy(&v, a.data.data(), 8);
    return v;
}

Array from_u64_vector(const std::vector<std::uint64_t>& v) {
    Array a;
    a.dtype = "<u8";
    a.shape = {static_cast<std::int64_t>(v.size())};
    a.data.resize(v.size() * 8);
    std::memcpy(a.data.data(), v.data(), a.data.size());
    return a;
}

std::vector<std::uint64_t> to_u64_vector(const Array& a) {
    std::vector<std::uint64_t> v(a.data.size() / 8);
    std::memcpy(v.data(), a.data.data(), a.data.size());
    return v;
}

}  // namespace tilesemi::npz
