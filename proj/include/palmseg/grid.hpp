#pragma once

// Discrete differential operators on regular 2D/3D grids.
//
// An image with extents (n1,...,nd) is stored as a flat array with axis 1
// fastest:
//
//   flat(j1,...,jd) = j1 + n1*j2 (+ n1*n2*j3)
//
// so the stride of axis i is n1*...*n_{i-1}.  The gradient uses forward
// differences with the last sample replicated per axis, which makes the
// difference in direction i vanish at the last index of that axis.  In 1D the
// operator is the matrix with rows (-1, 1) and an all-zero last row; in d
// dimensions it is the stack of I ⊗ D ⊗ I factors along each axis.
// divergence() applies the exact adjoint of gradient() under the Euclidean
// inner product, so laplacian() = divergence(gradient(.)) is symmetric
// positive semi-definite with spectral norm below 4d.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace palmseg {

class GridShape {
public:
    GridShape() = default;

    explicit GridShape(std::vector<int> dims) : dims_(std::move(dims)) {
        if (dims_.size() < 2 || dims_.size() > 3)
            throw std::invalid_argument("GridShape: dimension count must be 2 or 3");
        for (int e : dims_)
            if (e < 1)
                throw std::invalid_argument("GridShape: all extents must be >= 1");
    }

    GridShape(std::initializer_list<int> dims) : GridShape(std::vector<int>(dims)) {}

    int ndim() const { return static_cast<int>(dims_.size()); }
    int extent(int axis) const { return dims_[static_cast<std::size_t>(axis)]; }
    const std::vector<int>& extents() const { return dims_; }

    std::size_t pixels() const {
        std::size_t n = 1;
        for (int e : dims_) n *= static_cast<std::size_t>(e);
        return n;
    }

    // Stride of `axis` in the flat layout (axis 0 is the fastest).
    std::size_t stride(int axis) const {
        std::size_t s = 1;
        for (int i = 0; i < axis; ++i) s *= static_cast<std::size_t>(dims_[static_cast<std::size_t>(i)]);
        return s;
    }

    int min_extent() const { return *std::min_element(dims_.begin(), dims_.end()); }

    bool operator==(const GridShape& o) const { return dims_ == o.dims_; }
    bool operator!=(const GridShape& o) const { return !(*this == o); }

    std::string to_string() const {
        std::string s;
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(dims_[i]);
        }
        return s;
    }

private:
    std::vector<int> dims_;
};

// Scalar field on a grid (an image, its logarithm, or a log-illumination).
struct GridImage {
    GridShape shape;
    std::vector<double> values;

    GridImage() = default;
    explicit GridImage(const GridShape& s, double fill = 0.0)
        : shape(s), values(s.pixels(), fill) {}
    GridImage(const GridShape& s, std::vector<double> v) : shape(s), values(std::move(v)) {
        if (values.size() != shape.pixels())
            throw std::invalid_argument("GridImage: value count does not match shape");
    }

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t j) { return values[j]; }
    double operator[](std::size_t j) const { return values[j]; }
};

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline void require_finite(const GridImage& img, const char* what) {
    if (!all_finite(img.values))
        throw std::invalid_argument(std::string(what) + ": non-finite values");
}

// One d-vector per grid point, stored pixel-major with the axis index
// fastest: values[j*d + i] is component i at pixel j.
struct GridVectorField {
    GridShape shape;
    std::vector<double> values;

    GridVectorField() = default;
    explicit GridVectorField(const GridShape& s)
        : shape(s), values(s.pixels() * static_cast<std::size_t>(s.ndim()), 0.0) {}
};

// Forward-difference gradient of one scalar plane, written into `field`
// (pixel-major, axis fastest).  Component i is img(j+e_i) - img(j), and 0 at
// the last index along axis i.
inline void gradient_into(const GridShape& shape, std::span<const double> img,
                          std::span<double> field) {
    const int d = shape.ndim();
    const std::size_t n = shape.pixels();
    for (int axis = 0; axis < d; ++axis) {
        const std::size_t a = shape.stride(axis);
        const std::size_t m = static_cast<std::size_t>(shape.extent(axis));
        const std::size_t outer = n / (a * m);
        for (std::size_t ob = 0; ob < outer; ++ob) {
            const std::size_t block = ob * a * m;
            for (std::size_t t = 0; t < m; ++t) {
                const std::size_t base = block + t * a;
                if (t + 1 < m) {
                    for (std::size_t in = 0; in < a; ++in) {
                        const std::size_t j = base + in;
                        field[j * static_cast<std::size_t>(d) + static_cast<std::size_t>(axis)] =
                            img[j + a] - img[j];
                    }
                } else {
                    for (std::size_t in = 0; in < a; ++in)
                        field[(base + in) * static_cast<std::size_t>(d) + static_cast<std::size_t>(axis)] = 0.0;
                }
            }
        }
    }
}

inline GridVectorField gradient(const GridImage& img) {
    GridVectorField f(img.shape);
    gradient_into(img.shape, img.values, f.values);
    return f;
}

// Adjoint of gradient_into: out(j) = sum_i [ y_i(j-e_i) - y_i(j) ] with the
// boundary terms dropped where the corresponding gradient row is zero.  This
// is the transpose of the explicit difference matrix, i.e. -div.
inline void divergence_into(const GridShape& shape, std::span<const double> field,
                            std::span<double> out) {
    const int d = shape.ndim();
    const std::size_t n = shape.pixels();
    std::fill(out.begin(), out.end(), 0.0);
    for (int axis = 0; axis < d; ++axis) {
        const std::size_t a = shape.stride(axis);
        const std::size_t m = static_cast<std::size_t>(shape.extent(axis));
        const std::size_t outer = n / (a * m);
        for (std::size_t ob = 0; ob < outer; ++ob) {
            const std::size_t block = ob * a * m;
            for (std::size_t t = 0; t < m; ++t) {
                const std::size_t base = block + t * a;
                for (std::size_t in = 0; in < a; ++in) {
                    const std::size_t j = base + in;
                    double acc = 0.0;
                    if (t >= 1) acc += field[(j - a) * static_cast<std::size_t>(d) + static_cast<std::size_t>(axis)];
                    if (t + 1 < m) acc -= field[j * static_cast<std::size_t>(d) + static_cast<std::size_t>(axis)];
                    out[j] += acc;
                }
            }
        }
    }
}

inline GridImage divergence(const GridVectorField& field) {
    const std::size_t d = static_cast<std::size_t>(field.shape.ndim());
    if (field.values.size() != field.shape.pixels() * d)
        throw std::invalid_argument("divergence: component count does not match shape");
    GridImage out(field.shape);
    divergence_into(field.shape, field.values, out.values);
    return out;
}

inline void laplacian_into(const GridShape& shape, std::span<const double> img,
                           std::span<double> out, std::vector<double>& scratch_field) {
    scratch_field.resize(shape.pixels() * static_cast<std::size_t>(shape.ndim()));
    gradient_into(shape, img, scratch_field);
    divergence_into(shape, scratch_field, out);
}

inline GridImage laplacian(const GridImage& img) {
    return divergence(gradient(img));
}

// Upper bound 4d on the spectral norm of divergence(gradient(.)).
inline double laplacian_norm_bound(const GridShape& shape) {
    return 4.0 * static_cast<double>(shape.ndim());
}

// Normalized Gaussian kernel truncated at radius ceil(4*sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0))
        throw std::invalid_argument("gaussian_kernel: sigma must be > 0");
    const int radius = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int t = -radius; t <= radius; ++t) {
        const double v = std::exp(-0.5 * static_cast<double>(t) * static_cast<double>(t) / (sigma * sigma));
        k[static_cast<std::size_t>(t + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable Gaussian convolution with mirror extension at the boundaries.
// The mirrored index folds repeatedly, so kernels wider than an axis are fine.
inline GridImage gaussian_smooth(const GridImage& img, double sigma) {
    const std::vector<double> kernel = gaussian_kernel(sigma);
    const int radius = (static_cast<int>(kernel.size()) - 1) / 2;
    const int d = img.shape.ndim();
    const std::size_t n = img.shape.pixels();

    GridImage cur = img;
    std::vector<double> line;
    for (int axis = 0; axis < d; ++axis) {
        const std::size_t a = img.shape.stride(axis);
        const long m = img.shape.extent(axis);
        const std::size_t outer = n / (a * static_cast<std::size_t>(m));
        line.resize(static_cast<std::size_t>(m));
        GridImage next(img.shape);
        for (std::size_t ob = 0; ob < outer; ++ob) {
            const std::size_t block = ob * a * static_cast<std::size_t>(m);
            for (std::size_t in = 0; in < a; ++in) {
                for (long t = 0; t < m; ++t)
                    line[static_cast<std::size_t>(t)] = cur.values[block + static_cast<std::size_t>(t) * a + in];
                for (long t = 0; t < m; ++t) {
                    double acc = 0.0;
                    for (int s = -radius; s <= radius; ++s) {
                        long q = t + s;
                        while (q < 0 || q >= m) {
                            if (q < 0) q = -q - 1;
                            if (q >= m) q = 2 * m - 1 - q;
                        }
                        acc += kernel[static_cast<std::size_t>(s + radius)] * line[static_cast<std::size_t>(q)];
                    }
                    next.values[block + static_cast<std::size_t>(t) * a + in] = acc;
                }
            }
        }
        cur = std::move(next);
    }
    return cur;
}

// Log-domain preparation of a linear-domain image: f = log(F + epsilon).
// The offset keeps zero-valued pixels finite.
inline GridImage to_log(const GridImage& F, double epsilon = 1.0 / 255.0) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("to_log: epsilon must be > 0");
    for (double v : F.values)
        if (v < 0.0) throw std::invalid_argument("to_log: negative input pixels");
    GridImage f(F.shape);
    for (std::size_t j = 0; j < F.values.size(); ++j) f.values[j] = std::log(F.values[j] + epsilon);
    return f;
}

inline double dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

} // namespace palmseg
