#pragma once

#include <array>
#include <cmath>

#include "pf/common.hpp"

namespace pf {

struct Vec2 {
    double x = 0, y = 0;
};

inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(Vec3 a) {
    double n = norm(a);
    if (n < 1e-300) throw Error("normalize: zero-length vector");
    return a * (1.0 / n);
}

// Row-major 3x3, enough for homographies and their inverses.
struct Mat3 {
    std::array<double, 9> m{};

    static Mat3 identity() {
        Mat3 r;
        r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
        return r;
    }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }

    Mat3 inverse() const {
        double d = det();
        if (std::abs(d) < 1e-14) throw Error("Mat3::inverse: singular matrix");
        double id = 1.0 / d;
        Mat3 r;
        r.m[0] = (m[4] * m[8] - m[5] * m[7]) * id;
        r.m[1] = (m[2] * m[7] - m[1] * m[8]) * id;
        r.m[2] = (m[1] * m[5] - m[2] * m[4]) * id;
        r.m[3] = (m[5] * m[6] - m[3] * m[8]) * id;
        r.m[4] = (m[0] * m[8] - m[2] * m[6]) * id;
        r.m[5] = (m[2] * m[3] - m[0] * m[5]) * id;
        r.m[6] = (m[3] * m[7] - m[4] * m[6]) * id;
        r.m[7] = (m[1] * m[6] - m[0] * m[7]) * id;
        r.m[8] = (m[0] * m[4] - m[1] * m[3]) * id;
        return r;
    }

    // Projective application with homogeneous divide.
    Vec2 apply(Vec2 p) const {
        double w = m[6] * p.x + m[7] * p.y + m[8];
        if (std::abs(w) < 1e-14) throw Error("Mat3::apply: point at infinity");
        return {(m[0] * p.x + m[1] * p.y + m[2]) / w, (m[3] * p.x + m[4] * p.y + m[5]) / w};
    }
};

// Gaussian elimination with partial pivoting on an N x N system.
template <int N>
inline std::array<double, N> solve_linear(std::array<std::array<double, N + 1>, N> a) {
    for (int col = 0; col < N; ++col) {
        int pivot = col;
        for (int r = col + 1; r < N; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        if (std::abs(a[pivot][col]) < 1e-12) throw Error("solve_linear: singular system");
        std::swap(a[col], a[pivot]);
        for (int r = col + 1; r < N; ++r) {
            double f = a[r][col] / a[col][col];
            for (int c = col; c <= N; ++c) a[r][c] -= f * a[col][c];
        }
    }
    std::array<double, N> x{};
    for (int r = N - 1; r >= 0; --r) {
        double acc = a[r][N];
        for (int c = r + 1; c < N; ++c) acc -= a[r][c] * x[c];
        x[r] = acc / a[r][r];
    }
    return x;
}

} // namespace pf
