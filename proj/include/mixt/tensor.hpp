#pragma once

#include <cstdint>
#include <cstring>
#include <vector>

#include <Eigen/Core>

#include "mixt/common.hpp"
#include "mixt/rng.hpp"

namespace mixt {

using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EigenMat>;
using ConstMatMap = Eigen::Map<const EigenMat>;

// Dense row-major 2-D tensor of doubles. Vectors are represented as [1, n].
// All model math runs in double so analytic gradients can be checked against
// central differences at fp64 tolerances.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

    static Tensor zeros(int r, int c) { return Tensor(r, c); }

    static Tensor full(int r, int c, double v) {
        Tensor t(r, c);
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor normal(int r, int c, double stddev, Rng& rng) {
        Tensor t(r, c);
        for (auto& v : t.data) v = rng.next_normal(0.0, stddev);
        return t;
    }

    size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    MatMap map() { return MatMap(data.data(), rows, cols); }
    ConstMatMap map() const { return ConstMatMap(data.data(), rows, cols); }

    void add_(const Tensor& o) {
        require(same_shape(o), "Tensor::add_: shape mismatch");
        map() += o.map();
    }

    void scale_(double s) { map() *= s; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    uint64_t checksum() const {
        uint64_t h = fnv1a64(&rows, sizeof rows);
        h = fnv1a64(&cols, sizeof cols, h);
        return fnv1a64(data.data(), data.size() * sizeof(double), h);
    }
};

// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> rgb;

    Image() = default;
    Image(int h, int w) : height(h), width(w), rgb(static_cast<size_t>(h) * w * 3, 0) {}

    size_t offset(int y, int x) const {
        return (static_cast<size_t>(y) * width + x) * 3;
    }

    void set(int y, int x, uint8_t r, uint8_t g, uint8_t b) {
        const size_t o = offset(y, x);
        rgb[o] = r;
        rgb[o + 1] = g;
        rgb[o + 2] = b;
    }

    bool operator==(const Image& o) const {
        return height == o.height && width == o.width && rgb == o.rgb;
    }

    uint64_t checksum() const { return fnv1a64(rgb.data(), rgb.size()); }
};

}  // namespace mixt
