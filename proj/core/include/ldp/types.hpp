#pragma once

#include <algorithm>
#include <vector>

namespace ldp {

// Axis-aligned box, all fields fractions of the image size.
struct BBox {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    double x0() const { return cx - w / 2; }
    double y0() const { return cy - h / 2; }
    double x1() const { return cx + w / 2; }
    double y1() const { return cy + h / 2; }

    bool valid() const {
        return cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0 && w > 0.0 && w <= 1.0 &&
               h > 0.0 && h <= 1.0 && x1() > 0.0 && x0() < 1.0 && y1() > 0.0 && y0() < 1.0;
    }
};

inline double iou(const BBox& a, const BBox& b) {
    const double ix = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
    const double iy = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
    const double inter = ix * iy;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

// One detector candidate: box, objectness, per-class probabilities.
struct Detection {
    BBox box;
    double obj = 0.0;
    std::vector<double> cls;
};

}  // namespace ldp
