#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mixt/common.hpp"

namespace mixt {

// Axis-aligned box in normalized [0,1] coordinates, order x0,y0,x1,y1.
struct NormBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

// Unified id space over text, coordinate and special tokens. Layout is fixed:
// specials [0,3), then text tokens in their given order, then num_bins
// coordinate tokens "<bin>K".
class Vocabulary {
  public:
    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kPad = 2;
    static constexpr int kNumSpecials = 3;

    static const std::vector<std::string>& special_forms() {
        static const std::vector<std::string> forms{"<bos>", "<eos>", "<pad>"};
        return forms;
    }

    int size() const { return static_cast<int>(forms_.size()); }
    int num_bins() const { return num_bins_; }
    int text_count() const { return text_count_; }

    bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }
    bool is_text(int id) const { return id >= kNumSpecials && id < kNumSpecials + text_count_; }
    bool is_bin(int id) const { return id >= kNumSpecials + text_count_ && id < size(); }

    int bin_id(int bin_index) const {
        if (bin_index < 0 || bin_index >= num_bins_)
            fail("bin index ", bin_index, " out of range [0,", num_bins_, ")");
        return kNumSpecials + text_count_ + bin_index;
    }

    int bin_index(int id) const {
        if (!is_bin(id)) fail("id ", id, " is not a coordinate token");
        return id - kNumSpecials - text_count_;
    }

    const std::string& surface(int id) const {
        if (id < 0 || id >= size()) fail("token id ", id, " out of range [0,", size(), ")");
        return forms_[id];
    }

    int id_of(const std::string& token) const {
        auto it = index_.find(token);
        if (it == index_.end()) fail("unknown token \"", token, "\"");
        return it->second;
    }

    bool contains(const std::string& token) const { return index_.count(token) != 0; }

    // Whitespace word-level tokenization over the closed vocabulary.
    std::vector<int> encode(const std::string& text) const {
        std::vector<int> ids;
        size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
            size_t j = i;
            while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
            if (j > i) ids.push_back(id_of(text.substr(i, j - i)));
            i = j;
        }
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (i) out += ' ';
            out += surface(ids[i]);
        }
        return out;
    }

    // Serialized file form: a num_bins header, then specials, then text
    // tokens, one per line, '\n' separators. Bin lines are reconstructed.
    std::string serialized() const {
        std::string out = "num_bins=" + std::to_string(num_bins_) + "\n";
        for (int id = 0; id < kNumSpecials + text_count_; ++id) out += forms_[id] + "\n";
        return out;
    }

    uint64_t fingerprint() const { return fnv1a64(serialized()); }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) fail("cannot open vocabulary file for writing: ", path);
        const std::string body = serialized();
        f.write(body.data(), static_cast<std::streamsize>(body.size()));
        if (!f) fail("short write to vocabulary file: ", path);
    }

    static Vocabulary load(const std::string& path);

  private:
    friend Vocabulary build_vocabulary(const std::vector<std::string>&, int);

    std::vector<std::string> forms_;
    std::unordered_map<std::string, int> index_;
    int num_bins_ = 0;
    int text_count_ = 0;
};

namespace detail {
inline bool looks_like_bin_form(const std::string& s) {
    if (s.rfind("<bin>", 0) != 0 || s.size() == 5) return false;
    for (size_t i = 5; i < s.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
}
}  // namespace detail

inline Vocabulary build_vocabulary(const std::vector<std::string>& text_tokens, int num_bins) {
    if (text_tokens.empty()) fail("build_vocabulary: text token list is empty");
    if (num_bins < 2) fail("build_vocabulary: num_bins must be >= 2, got ", num_bins);

    Vocabulary v;
    v.num_bins_ = num_bins;
    v.text_count_ = static_cast<int>(text_tokens.size());

    const long total = static_cast<long>(Vocabulary::kNumSpecials) + v.text_count_ + num_bins;
    if (total > 65535) fail("build_vocabulary: vocabulary size ", total, " exceeds 65535");

    v.forms_.reserve(static_cast<size_t>(total));
    for (const auto& s : Vocabulary::special_forms()) v.forms_.push_back(s);
    for (const auto& t : text_tokens) {
        if (t.empty()) fail("build_vocabulary: empty text token");
        for (char c : t)
            if (std::isspace(static_cast<unsigned char>(c)))
                fail("build_vocabulary: token \"", t, "\" contains whitespace");
        for (const auto& s : Vocabulary::special_forms())
            if (t == s) fail("build_vocabulary: token \"", t, "\" collides with a special token");
        if (detail::looks_like_bin_form(t))
            fail("build_vocabulary: token \"", t, "\" collides with the coordinate token form");
        v.forms_.push_back(t);
    }
    for (int b = 0; b < num_bins; ++b) v.forms_.push_back("<bin>" + std::to_string(b));

    for (int id = 0; id < static_cast<int>(v.forms_.size()); ++id) {
        auto [it, inserted] = v.index_.emplace(v.forms_[id], id);
        if (!inserted) fail("build_vocabulary: duplicate token \"", v.forms_[id], "\"");
    }
    return v;
}

inline Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("cannot open vocabulary file: ", path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("num_bins=", 0) != 0)
        fail("vocabulary file ", path, ": missing num_bins header");
    int num_bins = 0;
    try {
        num_bins = std::stoi(line.substr(9));
    } catch (const std::exception&) {
        fail("vocabulary file ", path, ": bad num_bins value \"", line.substr(9), "\"");
    }
    const auto& specials = special_forms();
    for (const auto& s : specials) {
        if (!std::getline(f, line) || line != s)
            fail("vocabulary file ", path, ": expected special token line \"", s, "\"");
    }
    std::vector<std::string> text;
    while (std::getline(f, line)) {
        if (line.empty()) fail("vocabulary file ", path, ": empty token line");
        text.push_back(line);
    }
    return build_vocabulary(text, num_bins);
}

// round(x * (num_bins-1)); endpoints are exact by construction.
inline int quantize_coord(double x, int num_bins) {
    if (num_bins < 2) fail("quantize_coord: num_bins must be >= 2, got ", num_bins);
    if (!(x >= 0.0 && x <= 1.0)) fail("quantize_coord: x=", x, " outside [0,1]");
    const long b = std::lround(x * (num_bins - 1));
    return static_cast<int>(std::min<long>(std::max<long>(b, 0), num_bins - 1));
}

inline double dequantize_coord(int b, int num_bins) {
    if (num_bins < 2) fail("dequantize_coord: num_bins must be >= 2, got ", num_bins);
    if (b < 0 || b >= num_bins) fail("dequantize_coord: bin ", b, " out of range [0,", num_bins, ")");
    return static_cast<double>(b) / (num_bins - 1);
}

// Four bin-token ids in fixed order x0,y0,x1,y1.
inline std::vector<int> serialize_target_box(const Vocabulary& vocab, const NormBox& box) {
    if (!(box.x0 <= box.x1) || !(box.y0 <= box.y1))
        fail("serialize_target_box: inverted box (", box.x0, ",", box.y0, ",", box.x1, ",", box.y1, ")");
    for (double c : {box.x0, box.y0, box.x1, box.y1})
        if (!(c >= 0.0 && c <= 1.0)) fail("serialize_target_box: coordinate ", c, " outside [0,1]");
    const int nb = vocab.num_bins();
    return {vocab.bin_id(quantize_coord(box.x0, nb)), vocab.bin_id(quantize_coord(box.y0, nb)),
            vocab.bin_id(quantize_coord(box.x1, nb)), vocab.bin_id(quantize_coord(box.y1, nb))};
}

inline NormBox deserialize_target_box(const Vocabulary& vocab, const std::vector<int>& ids) {
    if (ids.size() != 4) fail("deserialize_target_box: expected 4 ids, got ", ids.size());
    const int nb = vocab.num_bins();
    NormBox b;
    b.x0 = dequantize_coord(vocab.bin_index(ids[0]), nb);
    b.y0 = dequantize_coord(vocab.bin_index(ids[1]), nb);
    b.x1 = dequantize_coord(vocab.bin_index(ids[2]), nb);
    b.y1 = dequantize_coord(vocab.bin_index(ids[3]), nb);
    return b;
}

}  // namespace mixt
