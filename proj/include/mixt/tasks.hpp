#pragma once

#include <algorithm>
#include <array>
#include <numeric>
#include <string>
#include <vector>

#include "mixt/rng.hpp"
#include "mixt/scene.hpp"
#include "mixt/vocab.hpp"
#include "mixt/window.hpp"

namespace mixt {

enum class Task { caption, vqa, grounding, detection, mim };

inline constexpr std::array<Task, 5> kAllTasks{Task::caption, Task::vqa, Task::grounding,
                                               Task::detection, Task::mim};

inline const char* task_name(Task t) {
    switch (t) {
        case Task::caption: return "caption";
        case Task::vqa: return "vqa";
        case Task::grounding: return "grounding";
        case Task::detection: return "detection";
        case Task::mim: return "mim";
    }
    fail("task_name: bad task value");
}

inline Task task_from_name(const std::string& s) {
    for (Task t : kAllTasks)
        if (s == task_name(t)) return t;
    fail("task_from_name: \"", s, "\" is not a task (caption|vqa|grounding|detection|mim)");
}

// Closed word list covering every instruction/target grammar below.
inline std::vector<std::string> task_text_tokens() {
    std::vector<std::string> words{"what", "does", "the",    "image",  "describe", "?",
                                   "a",    "and",  "color",  "is",     "how",      "many",
                                   "are",  "there", "left",  "of",     "yes",      "no",
                                   "which", "region", "text", "detect", "objects", "masked",
                                   "0",    "1",    "2",      "3",      "4"};
    for (int i = 0; i < kColorCount; ++i) words.push_back(color_name(Color(i)));
    for (int i = 0; i < kShapeCount; ++i) {
        words.push_back(shape_name(Shape(i)));
        words.push_back(shape_plural(Shape(i)));
    }
    return words;
}

inline Vocabulary default_vocabulary(int num_bins = 1000) {
    return build_vocabulary(task_text_tokens(), num_bins);
}

struct TaskSample {
    std::string id;
    Task task;
    MultimodalTriple triple;
    SceneSpec scene;  // ground truth kept for oracles
    PixelBox gold_box;
    bool has_gold_box = false;
    std::string instruction_text;
    std::string target_text;
};

// Reading order used by caption and detection targets: ascending x-center,
// then y-center, then x0.
inline std::vector<int> left_to_right_order(const SceneSpec& scene) {
    std::vector<int> order(scene.objects.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const PixelBox& A = scene.objects[a].bbox;
        const PixelBox& B = scene.objects[b].bbox;
        if (A.x0 + A.x1 != B.x0 + B.x1) return A.x0 + A.x1 < B.x0 + B.x1;
        if (A.y0 + A.y1 != B.y0 + B.y1) return A.y0 + A.y1 < B.y0 + B.y1;
        return A.x0 < B.x0;
    });
    return order;
}

// "a red circle and a blue square", objects in reading order.
inline std::string canonical_caption(const SceneSpec& scene) {
    std::string out;
    for (int idx : left_to_right_order(scene)) {
        if (!out.empty()) out += " and ";
        out += "a ";
        out += color_name(scene.objects[idx].color);
        out += ' ';
        out += shape_name(scene.objects[idx].shape);
    }
    return out;
}

// Pixel box -> [0,1] coordinates, divisor (dim-1) so the last pixel index
// maps to 1.0 exactly. Half-open right/bottom edges can reach dim, which
// would land just past 1.0 under this divisor; those are clamped.
inline NormBox normalized_box(const PixelBox& b, int canvas_h, int canvas_w) {
    auto norm = [](int v, int dim) { return std::min(1.0, static_cast<double>(v) / (dim - 1)); };
    return {norm(b.x0, canvas_w), norm(b.y0, canvas_h), norm(b.x1, canvas_w), norm(b.y1, canvas_h)};
}

namespace detail {

// Objects whose (color, shape) pair is unique in the scene, i.e. "the red
// circle" has exactly one referent.
inline std::vector<int> unique_referents(const SceneSpec& scene) {
    std::vector<int> out;
    for (size_t i = 0; i < scene.objects.size(); ++i) {
        int same = 0;
        for (const auto& o : scene.objects)
            if (o.color == scene.objects[i].color && o.shape == scene.objects[i].shape) ++same;
        if (same == 1) out.push_back(static_cast<int>(i));
    }
    return out;
}

inline std::string referent_phrase(const SceneObject& o) {
    return std::string(color_name(o.color)) + " " + shape_name(o.shape);
}

inline std::string box_token_text(const NormBox& nb, int num_bins) {
    const auto bin = [&](double x) { return "<bin>" + std::to_string(quantize_coord(x, num_bins)); };
    return bin(nb.x0) + " " + bin(nb.y0) + " " + bin(nb.x1) + " " + bin(nb.y1);
}

}  // namespace detail

// Instruction/target generation under the fixed grammars. Throws
// SampleRejection when the scene cannot support the task unambiguously;
// callers resample with a fresh scene.
inline TaskSample make_sample(const SceneSpec& scene_in, Task task, uint64_t seed,
                              const Vocabulary& vocab) {
    require(!scene_in.objects.empty(), "make_sample: scene has no objects");
    TaskSample s;
    s.task = task;
    s.scene = scene_in;
    s.scene.masked_object = -1;
    Rng rng(seed);

    switch (task) {
        case Task::caption: {
            s.instruction_text = "what does the image describe ?";
            s.target_text = canonical_caption(s.scene);
            break;
        }
        case Task::vqa: {
            // Subtypes: 0 color-of-shape, 1 count-of-shape, 2 left-of,
            // 3 describes yes/no. 1 and 3 are always available.
            std::vector<int> lone_shapes;  // shapes appearing exactly once
            for (int sh = 0; sh < kShapeCount; ++sh) {
                int cnt = 0;
                for (const auto& o : s.scene.objects)
                    if (o.shape == Shape(sh)) ++cnt;
                if (cnt == 1) lone_shapes.push_back(sh);
            }
            const std::vector<int> refs = detail::unique_referents(s.scene);
            std::vector<std::pair<int, int>> pairs;  // left-of candidates
            for (int a : refs)
                for (int b : refs) {
                    const PixelBox& A = s.scene.objects[a].bbox;
                    const PixelBox& B = s.scene.objects[b].bbox;
                    if (a != b && A.x0 + A.x1 != B.x0 + B.x1) pairs.emplace_back(a, b);
                }
            std::vector<int> subtypes{1, 3};
            if (!lone_shapes.empty()) subtypes.push_back(0);
            if (!pairs.empty()) subtypes.push_back(2);
            std::sort(subtypes.begin(), subtypes.end());
            const int sub = subtypes[rng.next_below(subtypes.size())];
            if (sub == 0) {
                const int sh = lone_shapes[rng.next_below(lone_shapes.size())];
                for (const auto& o : s.scene.objects)
                    if (o.shape == Shape(sh)) s.target_text = color_name(o.color);
                s.instruction_text =
                    std::string("what color is the ") + shape_name(Shape(sh)) + " ?";
            } else if (sub == 1) {
                const int sh = static_cast<int>(rng.next_below(kShapeCount));
                int cnt = 0;
                for (const auto& o : s.scene.objects)
                    if (o.shape == Shape(sh)) ++cnt;
                s.instruction_text =
                    std::string("how many ") + shape_plural(Shape(sh)) + " are there ?";
                s.target_text = std::to_string(cnt);
            } else if (sub == 2) {
                const auto [a, b] = pairs[rng.next_below(pairs.size())];
                const SceneObject& A = s.scene.objects[a];
                const SceneObject& B = s.scene.objects[b];
                s.instruction_text = "is the " + detail::referent_phrase(A) + " left of the " +
                                     detail::referent_phrase(B) + " ?";
                s.target_text = (A.bbox.x0 + A.bbox.x1 < B.bbox.x0 + B.bbox.x1) ? "yes" : "no";
            } else {
                const std::string truth = canonical_caption(s.scene);
                if (rng.next_bool()) {
                    s.instruction_text = "does the image describe " + truth + " ?";
                    s.target_text = "yes";
                } else {
                    SceneSpec edited = s.scene;
                    const auto idx = rng.next_below(edited.objects.size());
                    const Color old = edited.objects[idx].color;
                    Color next = old;
                    while (next == old) next = Color(rng.next_below(kColorCount));
                    edited.objects[idx].color = next;
                    s.instruction_text = "does the image describe " + canonical_caption(edited) + " ?";
                    s.target_text = "no";
                }
            }
            break;
        }
        case Task::grounding: {
            const std::vector<int> refs = detail::unique_referents(s.scene);
            if (refs.empty())
                throw SampleRejection("grounding: no unambiguous (color, shape) referent");
            const int idx = refs[rng.next_below(refs.size())];
            const SceneObject& obj = s.scene.objects[idx];
            s.instruction_text = "which region does the text a " + detail::referent_phrase(obj) +
                                 " describe ?";
            s.target_text = detail::box_token_text(
                normalized_box(obj.bbox, s.scene.height, s.scene.width), vocab.num_bins());
            s.gold_box = obj.bbox;
            s.has_gold_box = true;
            break;
        }
        case Task::detection: {
            s.instruction_text = "detect the objects";
            std::string out;
            for (int idx : left_to_right_order(s.scene)) {
                const SceneObject& obj = s.scene.objects[idx];
                if (!out.empty()) out += ' ';
                out += detail::box_token_text(
                    normalized_box(obj.bbox, s.scene.height, s.scene.width), vocab.num_bins());
                out += ' ';
                out += shape_name(obj.shape);
                out += ' ';
                out += color_name(obj.color);
            }
            s.target_text = out;
            break;
        }
        case Task::mim: {
            const auto idx = rng.next_below(s.scene.objects.size());
            s.scene.masked_object = static_cast<int>(idx);
            s.instruction_text = "what is the color of the masked region ?";
            s.target_text = color_name(s.scene.objects[idx].color);
            break;
        }
    }

    s.triple.image = render_scene(s.scene);
    s.triple.instruction = vocab.encode(s.instruction_text);
    s.triple.target = vocab.encode(s.target_text);
    return s;
}

}  // namespace mixt
