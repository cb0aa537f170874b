#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "mixt/common.hpp"
#include "mixt/scene.hpp"

namespace mixt {

// Brute-force recomputation of a target from the SceneSpec and the
// instruction text alone. Deliberately does not share make_sample's
// generation path: it re-derives reading order, captions and coordinate
// bins from first principles so tests can cross-check the generator.
namespace oracle {

namespace detail {

inline std::vector<std::string> words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

// Reading order, re-derived: selection by repeatedly taking the minimum key.
inline std::vector<int> reading_order(const SceneSpec& scene) {
    const int n = static_cast<int>(scene.objects.size());
    std::vector<bool> used(n, false);
    std::vector<int> order;
    for (int step = 0; step < n; ++step) {
        int best = -1;
        for (int i = 0; i < n; ++i) {
            if (used[i]) continue;
            if (best < 0) {
                best = i;
                continue;
            }
            const PixelBox& A = scene.objects[i].bbox;
            const PixelBox& B = scene.objects[best].bbox;
            const auto key = [](const PixelBox& p) {
                return std::array<int, 3>{p.x0 + p.x1, p.y0 + p.y1, p.x0};
            };
            if (key(A) < key(B)) best = i;
        }
        used[best] = true;
        order.push_back(best);
    }
    return order;
}

inline std::string caption(const SceneSpec& scene) {
    std::string out;
    for (int i : reading_order(scene)) {
        if (!out.empty()) out += " and ";
        out += std::string("a ") + color_name(scene.objects[i].color) + " " +
               shape_name(scene.objects[i].shape);
    }
    return out;
}

inline int bin_of(int pixel, int dim, int num_bins) {
    double x = static_cast<double>(pixel) / (dim - 1);
    if (x > 1.0) x = 1.0;
    return static_cast<int>(std::lround(x * (num_bins - 1)));
}

inline std::string box_bins(const PixelBox& b, int h, int w, int num_bins) {
    std::string out;
    const int vals[4] = {bin_of(b.x0, w, num_bins), bin_of(b.y0, h, num_bins),
                         bin_of(b.x1, w, num_bins), bin_of(b.y1, h, num_bins)};
    for (int i = 0; i < 4; ++i) {
        if (i) out += ' ';
        out += "<bin>" + std::to_string(vals[i]);
    }
    return out;
}

// The single object matching "color shape"; throws unless exactly one.
inline int find_referent(const SceneSpec& scene, const std::string& color,
                         const std::string& shape) {
    const Color c = color_from_name(color);
    const Shape sh = shape_from_name(shape);
    int found = -1, count = 0;
    for (size_t i = 0; i < scene.objects.size(); ++i) {
        if (scene.objects[i].color == c && scene.objects[i].shape == sh) {
            found = static_cast<int>(i);
            ++count;
        }
    }
    if (count != 1) fail("oracle: referent \"", color, " ", shape, "\" matches ", count, " objects");
    return found;
}

}  // namespace detail

// Answers any instruction produced by the fixed grammars. num_bins is needed
// only for coordinate-valued targets.
inline std::string oracle_answer(const SceneSpec& scene, const std::string& instruction,
                                 int num_bins) {
    using namespace detail;
    const std::vector<std::string> w = words(instruction);
    if (w.empty()) fail("oracle: empty instruction");

    if (w == std::vector<std::string>{"what", "does", "the", "image", "describe", "?"})
        return caption(scene);

    if (w.size() == 6 && w[0] == "what" && w[1] == "color" && w[2] == "is" && w[3] == "the" &&
        w[5] == "?") {
        const Shape sh = shape_from_name(w[4]);
        int found = -1, count = 0;
        for (size_t i = 0; i < scene.objects.size(); ++i)
            if (scene.objects[i].shape == sh) {
                found = static_cast<int>(i);
                ++count;
            }
        if (count != 1) fail("oracle: shape \"", w[4], "\" matches ", count, " objects");
        return color_name(scene.objects[found].color);
    }

    if (w.size() == 6 && w[0] == "how" && w[1] == "many" && w[3] == "are" && w[4] == "there" &&
        w[5] == "?") {
        const Shape sh = shape_from_name(w[2]);
        int count = 0;
        for (const auto& o : scene.objects)
            if (o.shape == sh) ++count;
        return std::to_string(count);
    }

    if (w.size() == 10 && w[0] == "is" && w[1] == "the" && w[4] == "left" && w[5] == "of" &&
        w[6] == "the" && w[9] == "?") {
        const int a = find_referent(scene, w[2], w[3]);
        const int b = find_referent(scene, w[7], w[8]);
        const PixelBox& A = scene.objects[a].bbox;
        const PixelBox& B = scene.objects[b].bbox;
        if (A.x0 + A.x1 == B.x0 + B.x1) fail("oracle: equal x-centers in left-of question");
        return A.x0 + A.x1 < B.x0 + B.x1 ? "yes" : "no";
    }

    if (w.size() >= 6 && w[0] == "does" && w[1] == "the" && w[2] == "image" && w[3] == "describe" &&
        w.back() == "?") {
        std::string claim;
        for (size_t i = 4; i + 1 < w.size(); ++i) {
            if (!claim.empty()) claim += ' ';
            claim += w[i];
        }
        return claim == caption(scene) ? "yes" : "no";
    }

    if (w.size() == 10 && w[0] == "which" && w[1] == "region" && w[2] == "does" && w[3] == "the" &&
        w[4] == "text" && w[5] == "a" && w[9] == "?") {
        const int idx = find_referent(scene, w[6], w[7]);
        return box_bins(scene.objects[idx].bbox, scene.height, scene.width, num_bins);
    }

    if (w == std::vector<std::string>{"detect", "the", "objects"}) {
        std::string out;
        for (int i : reading_order(scene)) {
            const SceneObject& o = scene.objects[i];
            if (!out.empty()) out += ' ';
            out += box_bins(o.bbox, scene.height, scene.width, num_bins);
            out += std::string(" ") + shape_name(o.shape) + " " + color_name(o.color);
        }
        return out;
    }

    if (w == std::vector<std::string>{"what", "is", "the", "color", "of", "the", "masked",
                                      "region", "?"}) {
        if (scene.masked_object < 0 ||
            scene.masked_object >= static_cast<int>(scene.objects.size()))
            fail("oracle: scene has no masked object");
        return color_name(scene.objects[scene.masked_object].color);
    }

    fail("oracle: instruction \"", instruction, "\" does not parse under any grammar");
}

}  // namespace oracle

using oracle::oracle_answer;

}  // namespace mixt
