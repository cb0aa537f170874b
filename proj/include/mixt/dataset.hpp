#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixt/oracle.hpp"
#include "mixt/tasks.hpp"

namespace mixt {

namespace fs = std::filesystem;
using nlohmann::json;

inline void write_ppm(const fs::path& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("cannot open image file for writing: ", path.string());
    f << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
    if (!f) fail("short write to image file: ", path.string());
}

inline Image parse_ppm(const std::string& bytes, const std::string& origin) {
    std::istringstream in(bytes);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0)
        fail("bad PPM header in ", origin);
    in.get();  // the single whitespace after maxval
    Image img(h, w);
    in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.rgb.size()))
        fail("truncated pixel data in ", origin);
    return img;
}

inline std::string read_file_bytes(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("cannot open file: ", path.string());
    std::ostringstream out;
    out << f.rdbuf();
    return out.str();
}

inline Image read_ppm(const fs::path& path) {
    return parse_ppm(read_file_bytes(path), path.string());
}

inline json scene_to_json(const SceneSpec& s) {
    json objs = json::array();
    for (const auto& o : s.objects)
        objs.push_back({{"shape", shape_name(o.shape)},
                        {"color", color_name(o.color)},
                        {"bbox", {o.bbox.x0, o.bbox.y0, o.bbox.x1, o.bbox.y1}}});
    return {{"height", s.height},
            {"width", s.width},
            {"masked_object", s.masked_object},
            {"objects", objs}};
}

inline SceneSpec scene_from_json(const json& j) {
    SceneSpec s;
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    s.masked_object = j.at("masked_object").get<int>();
    for (const auto& o : j.at("objects")) {
        SceneObject obj;
        obj.shape = shape_from_name(o.at("shape").get<std::string>());
        obj.color = color_from_name(o.at("color").get<std::string>());
        const auto& b = o.at("bbox");
        obj.bbox = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
        s.objects.push_back(obj);
    }
    return s;
}

// Layout: manifest.jsonl (one record per sample), images/<id>.ppm, checksums
// (FNV-1a over image file bytes), vocab.txt.
inline void write_dataset(const std::vector<TaskSample>& samples, const fs::path& dir,
                          const Vocabulary& vocab) {
    fs::create_directories(dir / "images");
    std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
    std::ofstream sums(dir / "checksums", std::ios::binary);
    if (!manifest || !sums) fail("cannot create dataset files in ", dir.string());
    for (const auto& s : samples) {
        require(!s.id.empty(), "write_dataset: sample with empty id");
        const std::string image_file = "images/" + s.id + ".ppm";
        write_ppm(dir / image_file, s.triple.image);
        sums << to_hex(fnv1a64(read_file_bytes(dir / image_file))) << ' ' << image_file << '\n';
        json rec{{"id", s.id},
                 {"task", task_name(s.task)},
                 {"image_file", image_file},
                 {"instruction", s.instruction_text},
                 {"target_text", s.target_text},
                 {"scene", scene_to_json(s.scene)}};
        if (s.has_gold_box)
            rec["bbox"] = {s.gold_box.x0, s.gold_box.y0, s.gold_box.x1, s.gold_box.y1};
        manifest << rec.dump() << '\n';
    }
    vocab.save((dir / "vocab.txt").string());
}

struct Dataset {
    std::vector<TaskSample> samples;
    Vocabulary vocab;
};

inline Dataset read_dataset(const fs::path& dir) {
    Dataset ds;
    ds.vocab = Vocabulary::load((dir / "vocab.txt").string());

    std::map<std::string, std::string> expected_sum;
    {
        std::ifstream sums(dir / "checksums", std::ios::binary);
        if (!sums) fail("missing checksums file in ", dir.string());
        std::string hex, file;
        while (sums >> hex >> file) expected_sum[file] = hex;
    }

    std::ifstream manifest(dir / "manifest.jsonl", std::ios::binary);
    if (!manifest) fail("missing manifest.jsonl in ", dir.string());
    std::string line;
    size_t line_no = 0;
    while (std::getline(manifest, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const std::exception& e) {
            fail("manifest.jsonl line ", line_no, ": ", e.what());
        }
        TaskSample s;
        s.id = rec.at("id").get<std::string>();
        s.task = task_from_name(rec.at("task").get<std::string>());
        s.instruction_text = rec.at("instruction").get<std::string>();
        s.target_text = rec.at("target_text").get<std::string>();
        s.scene = scene_from_json(rec.at("scene"));
        if (rec.contains("bbox")) {
            const auto& b = rec.at("bbox");
            s.gold_box = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                          b.at(3).get<int>()};
            s.has_gold_box = true;
        }
        const std::string image_file = rec.at("image_file").get<std::string>();
        if (!fs::exists(dir / image_file))
            fail("sample ", s.id, ": missing image file ", image_file);
        const std::string bytes = read_file_bytes(dir / image_file);
        auto it = expected_sum.find(image_file);
        if (it == expected_sum.end()) fail("sample ", s.id, ": no checksum entry for ", image_file);
        if (to_hex(fnv1a64(bytes)) != it->second)
            fail("sample ", s.id, ": checksum mismatch for ", image_file);
        s.triple.image = parse_ppm(bytes, image_file);
        s.triple.instruction = ds.vocab.encode(s.instruction_text);
        s.triple.target = ds.vocab.encode(s.target_text);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// Largest-remainder apportionment of `count` samples over the weighted
// tasks; requested proportions are matched within one sample per task.
inline std::vector<std::pair<Task, int>> mixture_counts(
    const std::vector<std::pair<Task, double>>& mix, int count) {
    require(!mix.empty(), "mixture_counts: empty task mixture");
    require(count >= 0, "mixture_counts: negative count");
    double total = 0.0;
    for (const auto& [t, w] : mix) {
        if (w < 0) fail("mixture_counts: negative weight for task ", task_name(t));
        total += w;
    }
    require(total > 0.0, "mixture_counts: weights sum to zero");
    std::vector<std::pair<Task, int>> out;
    std::vector<std::pair<double, size_t>> remainders;
    int assigned = 0;
    for (size_t i = 0; i < mix.size(); ++i) {
        const double exact = mix[i].second / total * count;
        const int base = static_cast<int>(exact);
        out.emplace_back(mix[i].first, base);
        remainders.emplace_back(-(exact - base), i);  // negate: sort ascending = largest first
        assigned += base;
    }
    std::stable_sort(remainders.begin(), remainders.end());
    for (int r = 0; r < count - assigned; ++r)
        out[remainders[static_cast<size_t>(r)].second].second += 1;
    return out;
}

inline std::vector<std::pair<Task, double>> uniform_mixture() {
    std::vector<std::pair<Task, double>> mix;
    for (Task t : kAllTasks) mix.emplace_back(t, 1.0);
    return mix;
}

// Deterministic mixed-task generation. A rejected (scene, task) pair is
// retried with a derived seed, so every byte of the output is a function of
// (seed, mix, count, canvas).
inline std::vector<TaskSample> generate_mixture(const std::vector<std::pair<Task, double>>& mix,
                                                int count, uint64_t seed, const Vocabulary& vocab,
                                                int canvas_h = 64, int canvas_w = 64) {
    std::vector<TaskSample> out;
    int global_index = 0;
    for (const auto& [task, n] : mixture_counts(mix, count)) {
        for (int k = 0; k < n; ++k, ++global_index) {
            TaskSample s;
            for (uint64_t attempt = 0;; ++attempt) {
                require(attempt < 100, "generate_mixture: 100 consecutive rejections");
                const SceneSpec scene = sample_scene(
                    derive_seed(seed, "scene", static_cast<uint64_t>(global_index), attempt),
                    canvas_h, canvas_w);
                try {
                    s = make_sample(scene, task,
                                    derive_seed(seed, "task", static_cast<uint64_t>(global_index),
                                                attempt),
                                    vocab);
                    break;
                } catch (const SampleRejection&) {
                    continue;
                }
            }
            char idx[16];
            std::snprintf(idx, sizeof idx, "%06d", global_index);
            s.id = std::string(task_name(task)) + "-" + idx;
            out.push_back(std::move(s));
        }
    }
    return out;
}

}  // namespace mixt
