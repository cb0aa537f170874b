#pragma once

#include <array>
#include <string>
#include <vector>

#include "mixt/common.hpp"
#include "mixt/rng.hpp"
#include "mixt/tensor.hpp"

namespace mixt {

enum class Shape { circle, square, triangle };
enum class Color { red, green, blue, yellow };

inline constexpr int kShapeCount = 3;
inline constexpr int kColorCount = 4;

inline const char* shape_name(Shape s) {
    switch (s) {
        case Shape::circle: return "circle";
        case Shape::square: return "square";
        case Shape::triangle: return "triangle";
    }
    fail("shape_name: bad shape value");
}

inline const char* shape_plural(Shape s) {
    switch (s) {
        case Shape::circle: return "circles";
        case Shape::square: return "squares";
        case Shape::triangle: return "triangles";
    }
    fail("shape_plural: bad shape value");
}

inline const char* color_name(Color c) {
    switch (c) {
        case Color::red: return "red";
        case Color::green: return "green";
        case Color::blue: return "blue";
        case Color::yellow: return "yellow";
    }
    fail("color_name: bad color value");
}

inline std::array<uint8_t, 3> color_rgb(Color c) {
    switch (c) {
        case Color::red: return {255, 0, 0};
        case Color::green: return {0, 160, 0};
        case Color::blue: return {0, 0, 255};
        case Color::yellow: return {255, 220, 0};
    }
    fail("color_rgb: bad color value");
}

inline Shape shape_from_name(const std::string& s) {
    for (int i = 0; i < kShapeCount; ++i)
        if (s == shape_name(Shape(i)) || s == shape_plural(Shape(i))) return Shape(i);
    fail("shape_from_name: \"", s, "\" is not a shape");
}

inline Color color_from_name(const std::string& s) {
    for (int i = 0; i < kColorCount; ++i)
        if (s == color_name(Color(i))) return Color(i);
    fail("color_from_name: \"", s, "\" is not a color");
}

// Integer pixel box, half-open: covers x in [x0,x1), y in [y0,y1).
struct PixelBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    long area() const { return static_cast<long>(width()) * height(); }

    bool overlaps(const PixelBox& o) const {
        return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
    }

    bool inside(int canvas_h, int canvas_w) const {
        return x0 >= 0 && y0 >= 0 && x1 <= canvas_w && y1 <= canvas_h && x0 < x1 && y0 < y1;
    }

    bool operator==(const PixelBox& o) const {
        return x0 == o.x0 && y0 == o.y0 && x1 == o.x1 && y1 == o.y1;
    }
};

struct SceneObject {
    Shape shape;
    Color color;
    PixelBox bbox;
};

struct SceneSpec {
    int height = 64;
    int width = 64;
    std::vector<SceneObject> objects;
    int masked_object = -1;  // index of the object hidden behind a gray patch
};

inline constexpr int kMinObjectSide = 8;
inline constexpr int kMaxObjectSide = 20;
inline constexpr int kPlacementRetries = 1000;

// 1-4 non-overlapping objects, fully inside the canvas, min side 8 px.
// If a placement fails 1000 times the target count is reduced by one and
// placement restarts; a single <=20x20 object always fits on 64x64, so the
// loop terminates.
inline SceneSpec sample_scene(uint64_t seed, int height = 64, int width = 64) {
    require(height >= kMaxObjectSide && width >= kMaxObjectSide,
            "sample_scene: canvas too small for the object size range");
    Rng rng(seed);
    int want = 1 + static_cast<int>(rng.next_below(4));
    SceneSpec scene;
    scene.height = height;
    scene.width = width;
    while (true) {
        scene.objects.clear();
        bool ok = true;
        for (int i = 0; i < want && ok; ++i) {
            bool placed = false;
            for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
                SceneObject obj;
                obj.shape = Shape(rng.next_below(kShapeCount));
                obj.color = Color(rng.next_below(kColorCount));
                const int span = kMaxObjectSide - kMinObjectSide + 1;
                int bw = kMinObjectSide + static_cast<int>(rng.next_below(span));
                int bh = (obj.shape == Shape::triangle)
                             ? kMinObjectSide + static_cast<int>(rng.next_below(span))
                             : bw;  // circles and squares get square boxes
                const int x0 = static_cast<int>(rng.next_below(width - bw + 1));
                const int y0 = static_cast<int>(rng.next_below(height - bh + 1));
                obj.bbox = {x0, y0, x0 + bw, y0 + bh};
                bool clear = true;
                for (const auto& other : scene.objects)
                    clear = clear && !obj.bbox.overlaps(other.bbox);
                if (clear) {
                    scene.objects.push_back(obj);
                    placed = true;
                }
            }
            ok = placed;
        }
        if (ok) return scene;
        --want;
    }
}

namespace detail {

inline void fill_square(Image& img, const PixelBox& b, const std::array<uint8_t, 3>& rgb) {
    for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x) img.set(y, x, rgb[0], rgb[1], rgb[2]);
}

inline void fill_ellipse(Image& img, const PixelBox& b, const std::array<uint8_t, 3>& rgb) {
    const double cx = b.x0 + b.width() / 2.0;
    const double cy = b.y0 + b.height() / 2.0;
    const double rx = b.width() / 2.0;
    const double ry = b.height() / 2.0;
    for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x) {
            const double dx = (x + 0.5 - cx) / rx;
            const double dy = (y + 0.5 - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) img.set(y, x, rgb[0], rgb[1], rgb[2]);
        }
}

// Apex at top-center, base along the bottom edge of the box.
inline void fill_triangle(Image& img, const PixelBox& b, const std::array<uint8_t, 3>& rgb) {
    const double cx = b.x0 + b.width() / 2.0;
    const int h = b.height();
    for (int y = b.y0; y < b.y1; ++y) {
        const double t = (y - b.y0 + 0.5) / h;  // 0 at apex row, 1 at base
        const double half = t * b.width() / 2.0;
        for (int x = b.x0; x < b.x1; ++x) {
            const double px = x + 0.5;
            if (px >= cx - half && px <= cx + half) img.set(y, x, rgb[0], rgb[1], rgb[2]);
        }
    }
}

}  // namespace detail

inline constexpr std::array<uint8_t, 3> kMaskGray{128, 128, 128};

// Deterministic rasterization: white background, objects in list order
// (boxes never overlap), then the mask patch if one is set.
inline Image render_scene(const SceneSpec& scene) {
    Image img(scene.height, scene.width);
    std::fill(img.rgb.begin(), img.rgb.end(), uint8_t{255});
    for (const auto& obj : scene.objects) {
        require(obj.bbox.inside(scene.height, scene.width), "render_scene: bbox outside canvas");
        const auto rgb = color_rgb(obj.color);
        switch (obj.shape) {
            case Shape::circle: detail::fill_ellipse(img, obj.bbox, rgb); break;
            case Shape::square: detail::fill_square(img, obj.bbox, rgb); break;
            case Shape::triangle: detail::fill_triangle(img, obj.bbox, rgb); break;
        }
    }
    if (scene.masked_object >= 0) {
        require(scene.masked_object < static_cast<int>(scene.objects.size()),
                "render_scene: masked_object index out of range");
        detail::fill_square(img, scene.objects[scene.masked_object].bbox, kMaskGray);
    }
    return img;
}

}  // namespace mixt
