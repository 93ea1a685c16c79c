#include "mvdetr/box.hpp"

#include <algorithm>

namespace mvdetr {

double iou3d(const Box3D& a, const Box3D& b) {
    a.validate();
    b.validate();
    Vec3 alo, ahi, blo, bhi;
    a.aabb(alo, ahi);
    b.aabb(blo, bhi);
    double ix = std::max(0.0, std::min(ahi.x, bhi.x) - std::max(alo.x, blo.x));
    double iy = std::max(0.0, std::min(ahi.y, bhi.y) - std::max(alo.y, blo.y));
    double iz = std::max(0.0, std::min(ahi.z, bhi.z) - std::max(alo.z, blo.z));
    double inter = ix * iy * iz;
    double va = (ahi.x - alo.x) * (ahi.y - alo.y) * (ahi.z - alo.z);
    double vb = (bhi.x - blo.x) * (bhi.y - blo.y) * (bhi.z - blo.z);
    double uni = va + vb - inter;
    return uni > 0 ? inter / uni : 0.0;
}

}  // namespace mvdetr
