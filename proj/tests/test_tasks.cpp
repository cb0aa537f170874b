#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "mixt/oracle.hpp"
#include "mixt/tasks.hpp"

using namespace mixt;
using Catch::Matchers::ContainsSubstring;

namespace {

const Vocabulary& vocab() {
    static const Vocabulary v = default_vocabulary(1000);
    return v;
}

SceneSpec single_red_circle() {
    SceneSpec s;
    s.objects.push_back({Shape::circle, Color::red, {8, 8, 24, 24}});
    return s;
}

}  // namespace

TEST_CASE("single red circle vqa answers red", "[tasks]") {
    // with one object the only color-of-shape question is about the circle
    for (uint64_t seed = 0; seed < 50; ++seed) {
        const TaskSample s = make_sample(single_red_circle(), Task::vqa, seed, vocab());
        if (s.instruction_text == "what color is the circle ?") {
            REQUIRE(s.target_text == "red");
            return;
        }
    }
    FAIL("color-of-shape subtype never sampled in 50 draws");
}

TEST_CASE("grounding target is the quantized normalized bbox", "[tasks]") {
    const TaskSample s = make_sample(single_red_circle(), Task::grounding, 3, vocab());
    REQUIRE(s.instruction_text == "which region does the text a red circle describe ?");
    REQUIRE(s.target_text == "<bin>127 <bin>127 <bin>381 <bin>381");
    REQUIRE(s.has_gold_box);
    REQUIRE(s.gold_box == PixelBox{8, 8, 24, 24});
}

TEST_CASE("caption lists objects left to right", "[tasks]") {
    SceneSpec s;
    s.objects.push_back({Shape::square, Color::blue, {40, 10, 56, 26}});
    s.objects.push_back({Shape::circle, Color::red, {4, 30, 20, 46}});
    const TaskSample t = make_sample(s, Task::caption, 0, vocab());
    REQUIRE(t.instruction_text == "what does the image describe ?");
    REQUIRE(t.target_text == "a red circle and a blue square");
}

TEST_CASE("caption as yes/no question follows the describes template", "[tasks]") {
    bool saw_yes = false, saw_no = false;
    for (uint64_t seed = 0; seed < 200 && !(saw_yes && saw_no); ++seed) {
        const TaskSample s = make_sample(single_red_circle(), Task::vqa, seed, vocab());
        if (s.instruction_text.rfind("does the image describe ", 0) != 0) continue;
        if (s.target_text == "yes") {
            REQUIRE(s.instruction_text == "does the image describe a red circle ?");
            saw_yes = true;
        } else {
            REQUIRE(s.target_text == "no");
            REQUIRE(s.instruction_text != "does the image describe a red circle ?");
            saw_no = true;
        }
    }
    REQUIRE(saw_yes);
    REQUIRE(saw_no);
}

TEST_CASE("detection target groups bins, shape, color in reading order", "[tasks]") {
    SceneSpec s;
    s.objects.push_back({Shape::square, Color::blue, {40, 10, 56, 26}});
    s.objects.push_back({Shape::circle, Color::red, {8, 8, 24, 24}});
    const TaskSample t = make_sample(s, Task::detection, 0, vocab());
    REQUIRE(t.instruction_text == "detect the objects");
    REQUIRE(t.target_text ==
            "<bin>127 <bin>127 <bin>381 <bin>381 circle red "
            "<bin>634 <bin>159 <bin>888 <bin>412 square blue");
}

TEST_CASE("mim masks one object and asks for its color", "[tasks]") {
    SceneSpec s;
    s.objects.push_back({Shape::square, Color::yellow, {4, 4, 16, 16}});
    s.objects.push_back({Shape::circle, Color::green, {30, 30, 46, 46}});
    const TaskSample t = make_sample(s, Task::mim, 5, vocab());
    REQUIRE(t.instruction_text == "what is the color of the masked region ?");
    REQUIRE(t.scene.masked_object >= 0);
    const SceneObject& hidden = t.scene.objects[static_cast<size_t>(t.scene.masked_object)];
    REQUIRE(t.target_text == color_name(hidden.color));
    // the rendered image really hides it
    const PixelBox& b = hidden.bbox;
    const size_t off = t.triple.image.offset((b.y0 + b.y1) / 2, (b.x0 + b.x1) / 2);
    REQUIRE(t.triple.image.rgb[off] == kMaskGray[0]);
}

TEST_CASE("grounding rejects scenes with no unambiguous referent", "[tasks]") {
    SceneSpec s;
    s.objects.push_back({Shape::circle, Color::red, {4, 4, 16, 16}});
    s.objects.push_back({Shape::circle, Color::red, {30, 30, 46, 46}});
    REQUIRE_THROWS_AS(make_sample(s, Task::grounding, 0, vocab()), SampleRejection);
}

TEST_CASE("token encodings live inside the vocabulary and length limits", "[tasks][property]") {
    const PackConfig cfg;
    for (uint64_t seed = 0; seed < 500; ++seed) {
        const SceneSpec scene = sample_scene(seed);
        for (Task task : kAllTasks) {
            TaskSample s;
            try {
                s = make_sample(scene, task, seed ^ 0xabc, vocab());
            } catch (const SampleRejection&) {
                continue;
            }
            REQUIRE(static_cast<int>(s.triple.instruction.size()) <= cfg.max_source_text_len);
            REQUIRE(static_cast<int>(s.triple.target.size()) <= cfg.max_target_len);
            REQUIRE(!s.triple.target.empty());
            REQUIRE(vocab().decode(s.triple.instruction) == s.instruction_text);
            REQUIRE(vocab().decode(s.triple.target) == s.target_text);
        }
    }
}

TEST_CASE("oracle answers match generated targets across 1000 samples", "[tasks][oracle]") {
    int checked = 0;
    uint64_t seed = 0;
    while (checked < 1000) {
        const SceneSpec scene = sample_scene(seed);
        const Task task = kAllTasks[seed % kAllTasks.size()];
        ++seed;
        TaskSample s;
        try {
            s = make_sample(scene, task, seed * 31 + 7, vocab());
        } catch (const SampleRejection&) {
            continue;
        }
        INFO("task " << task_name(task) << " instruction: " << s.instruction_text);
        REQUIRE(oracle_answer(s.scene, s.instruction_text, vocab().num_bins()) == s.target_text);
        ++checked;
    }
}

TEST_CASE("oracle handles hand-written questions", "[tasks][oracle]") {
    SceneSpec s;
    s.objects.push_back({Shape::circle, Color::red, {4, 4, 16, 16}});
    s.objects.push_back({Shape::circle, Color::blue, {20, 20, 32, 32}});
    s.objects.push_back({Shape::circle, Color::green, {40, 40, 56, 56}});
    REQUIRE(oracle_answer(s, "how many circles are there ?", 1000) == "3");
    REQUIRE(oracle_answer(s, "how many squares are there ?", 1000) == "0");
    REQUIRE(oracle_answer(s, "is the red circle left of the green circle ?", 1000) == "yes");
    REQUIRE(oracle_answer(s, "is the green circle left of the red circle ?", 1000) == "no");
    REQUIRE_THROWS_WITH(oracle_answer(s, "what shall we do ?", 1000),
                        ContainsSubstring("does not parse"));
    REQUIRE_THROWS_AS(oracle_answer(s, "what is the color of the masked region ?", 1000), Error);
}

TEST_CASE("vqa count answers stay within the digit vocabulary", "[tasks][property]") {
    std::set<std::string> seen;
    for (uint64_t seed = 0; seed < 300; ++seed) {
        const TaskSample s = make_sample(sample_scene(seed), Task::vqa, seed, vocab());
        if (s.instruction_text.rfind("how many", 0) == 0) seen.insert(s.target_text);
    }
    for (const auto& t : seen) {
        REQUIRE(t.size() == 1);
        REQUIRE(t[0] >= '0');
        REQUIRE(t[0] <= '4');
    }
    REQUIRE(seen.size() >= 2);
}
