#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "mixt/common.hpp"
#include "mixt/params.hpp"

namespace mixt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts are unsupported");

// Everything a run needs to resume bit-exactly: parameters with their
// trainable mask, optimizer moments keyed by parameter name, the step
// counter, and a snapshot of the config the parameters were built under.
struct Checkpoint {
    uint64_t step = 0;
    uint64_t adam_t = 0;  // optimizer update count for bias correction
    std::string config_snapshot;
    ParameterStore store;
    std::map<std::string, Tensor> opt_m;
    std::map<std::string, Tensor> opt_v;
};

namespace detail {

inline void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::string& out, uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }
inline void put_i32(std::string& out, int32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

inline void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out += s;
}

inline void put_tensor(std::string& out, const Tensor& t) {
    put_i32(out, t.rows);
    put_i32(out, t.cols);
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
}

struct Cursor {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) fail("checkpoint: truncated file (wanted ", n, " more bytes)");
    }
    uint32_t u32() {
        need(4);
        uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    int32_t i32() {
        need(4);
        int32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    std::string str() {
        const uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    Tensor tensor() {
        const int32_t rows = i32();
        const int32_t cols = i32();
        if (rows < 0 || cols < 0) fail("checkpoint: negative tensor dims");
        Tensor t(rows, cols);
        need(t.data.size() * sizeof(double));
        std::memcpy(t.data.data(), buf.data() + pos, t.data.size() * sizeof(double));
        pos += t.data.size() * sizeof(double);
        return t;
    }
};

}  // namespace detail

inline constexpr char kCheckpointMagic[9] = "MIXTCKPT";
inline constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    using namespace detail;
    std::string buf;
    buf.append(kCheckpointMagic, 8);
    put_u32(buf, kCheckpointVersion);
    put_u64(buf, ck.step);
    put_u64(buf, ck.adam_t);
    put_str(buf, ck.config_snapshot);
    put_u32(buf, static_cast<uint32_t>(ck.store.count()));
    for (int i = 0; i < ck.store.count(); ++i) {
        put_str(buf, ck.store.name(i));
        buf.push_back(ck.store.trainable(i) ? 1 : 0);
        put_tensor(buf, ck.store.value(i));
    }
    put_u32(buf, static_cast<uint32_t>(ck.opt_m.size()));
    for (const auto& [name, t] : ck.opt_m) {
        put_str(buf, name);
        put_tensor(buf, t);
    }
    put_u32(buf, static_cast<uint32_t>(ck.opt_v.size()));
    for (const auto& [name, t] : ck.opt_v) {
        put_str(buf, name);
        put_tensor(buf, t);
    }
    const uint64_t sum = fnv1a64(buf.data(), buf.size());
    put_u64(buf, sum);

    std::ofstream f(path, std::ios::binary);
    if (!f) fail("cannot open checkpoint for writing: ", path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) fail("short write to checkpoint: ", path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    using namespace detail;
    std::string buf;
    {
        std::ifstream f(path, std::ios::binary);
        if (!f) fail("cannot open checkpoint: ", path);
        std::ostringstream ss;
        ss << f.rdbuf();
        buf = ss.str();
    }
    if (buf.size() < 8 + 4 + 8) fail("checkpoint ", path, ": file too small");
    const size_t body = buf.size() - 8;
    uint64_t stored_sum;
    std::memcpy(&stored_sum, buf.data() + body, 8);
    if (fnv1a64(buf.data(), body) != stored_sum)
        fail("checkpoint ", path, ": checksum mismatch (corrupt or truncated file)");

    Cursor c{buf};
    c.need(8);
    if (std::memcmp(buf.data(), kCheckpointMagic, 8) != 0)
        fail("checkpoint ", path, ": bad magic (not a checkpoint file)");
    c.pos = 8;
    const uint32_t version = c.u32();
    if (version != kCheckpointVersion)
        fail("checkpoint ", path, ": unsupported version ", version);

    Checkpoint ck;
    ck.step = c.u64();
    ck.adam_t = c.u64();
    ck.config_snapshot = c.str();
    const uint32_t n_params = c.u32();
    for (uint32_t i = 0; i < n_params; ++i) {
        const std::string name = c.str();
        c.need(1);
        const bool trainable = buf[c.pos++] != 0;
        ck.store.add(name, c.tensor(), trainable);
    }
    const uint32_t n_m = c.u32();
    for (uint32_t i = 0; i < n_m; ++i) {
        const std::string name = c.str();
        ck.opt_m.emplace(name, c.tensor());
    }
    const uint32_t n_v = c.u32();
    for (uint32_t i = 0; i < n_v; ++i) {
        const std::string name = c.str();
        ck.opt_v.emplace(name, c.tensor());
    }
    if (c.pos != body) fail("checkpoint ", path, ": trailing bytes after payload");
    return ck;
}

}  // namespace mixt
