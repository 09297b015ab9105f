#pragma once

#include "krom/geometry.hpp"

#include <random>

namespace krom {

// Portable generator: mt19937_64 seeded through splitmix64 of (seed, stream). Normals use Box–Muller on
// 53-bit uniforms so sequences do not depend on the standard library's distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);
    double uniform();  // [0, 1)
    double normal();
    int uniform_int(int lo, int hi);  // inclusive

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);
// Seed for sub-object `stream` of a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

// sum_i a_i (cos(b_i pi x) + sin(b_i pi x)) on [-1, 1]
struct TrigSeries1D {
    Vec a;
    Eigen::VectorXi b;

    double operator()(double x) const;
    Vec sample(const Vec& x) const;
};

TrigSeries1D sample_trig_ic_1d(std::uint64_t rng_seed, int n_terms = 10);

// sum_{n,m=1..5} a_nm sin(n x) sin(m y) on (0, 2 pi)^2
struct TrigSeries2D {
    Mat a = Mat::Zero(5, 5);  // a(n-1, m-1)

    double operator()(double x, double y) const;
    Vec sample(const CollocationSet& grid) const;
};

TrigSeries2D sample_trig_ic_2d(std::uint64_t rng_seed);

// Re sum_k xi_k / (1 + |k|^2) exp(i (k.x + phi_k)) over |k1|, |k2| <= kmax, k != 0.
struct FourierSeries2D {
    struct Mode {
        int k1, k2;
        double amplitude;  // xi / (1 + |k|^2)
        double phase;
    };
    std::vector<Mode> modes;
    int kmax = 8;

    double operator()(double x, double y) const;
    Vec sample(const CollocationSet& grid) const;
};

FourierSeries2D sample_bandlimited_series(std::uint64_t rng_seed, int kmax = 8);
Vec sample_bandlimited_fourier(std::uint64_t rng_seed, int kmax, const CollocationSet& grid);

enum class SamplerKind { gp_gaussian, trig_random, bandlimited_fourier };

std::string to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(std::string_view name);

struct SamplerSpec {
    SamplerKind kind = SamplerKind::gp_gaussian;
    double sigma = 0.15;  // GP lengthscale
    int n_terms = 10;     // 1D trig series
    int kmax = 8;         // Fourier band
    double amplitude = 1.0;  // multiplies every sampled field
    std::uint64_t seed = 1;
};

}  // namespace krom
