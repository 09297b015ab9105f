#include "krom/random_fields.hpp"

#include <cmath>
#include <numbers>

namespace krom {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return splitmix64(splitmix64(master) ^ (stream * 0xD1B54A32D192ED03ull + 0x632BE59BD9B4E019ull));
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : engine_(derive_seed(seed, stream)) {}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    spare_ = rad * std::sin(ang);
    has_spare_ = true;
    return rad * std::cos(ang);
}

int Rng::uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    // rejection keeps the draw unbiased
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % span;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return lo + static_cast<int>(v % span);
}

double TrigSeries1D::operator()(double x) const {
    double s = 0.0;
    for (Index i = 0; i < a.size(); ++i) {
        const double w = b[i] * std::numbers::pi * x;
        s += a[i] * (std::cos(w) + std::sin(w));
    }
    return s;
}

Vec TrigSeries1D::sample(const Vec& x) const {
    Vec out(x.size());
    for (Index i = 0; i < x.size(); ++i) out[i] = (*this)(x[i]);
    return out;
}

TrigSeries1D sample_trig_ic_1d(std::uint64_t rng_seed, int n_terms) {
    if (n_terms < 1) throw Error(ErrorKind::invalid_parameter, "n_terms must be positive");
    Rng rng(rng_seed, 0x7431);
    TrigSeries1D ic;
    ic.a.resize(n_terms);
    ic.b.resize(n_terms);
    for (int i = 0; i < n_terms; ++i) {
        ic.a[i] = rng.normal();
        ic.b[i] = rng.uniform_int(1, 2);
    }
    return ic;
}

double TrigSeries2D::operator()(double x, double y) const {
    double s = 0.0;
    for (int n = 1; n <= 5; ++n) {
        const double sx = std::sin(n * x);
        for (int m = 1; m <= 5; ++m) s += a(n - 1, m - 1) * sx * std::sin(m * y);
    }
    return s;
}

Vec TrigSeries2D::sample(const CollocationSet& grid) const {
    Vec out(grid.size());
    for (Index p = 0; p < grid.size(); ++p) {
        // sin(n x) is not exactly zero at x = 2 pi in floating point; boundary nodes are zero by definition
        out[p] = grid.boundary[p] ? 0.0 : (*this)(grid.points(p, 0), grid.points(p, 1));
    }
    return out;
}

TrigSeries2D sample_trig_ic_2d(std::uint64_t rng_seed) {
    Rng rng(rng_seed, 0x7432);
    TrigSeries2D ic;
    for (int n = 0; n < 5; ++n)
        for (int m = 0; m < 5; ++m) ic.a(n, m) = rng.normal();
    return ic;
}

double FourierSeries2D::operator()(double x, double y) const {
    double s = 0.0;
    for (const auto& md : modes) s += md.amplitude * std::cos(md.k1 * x + md.k2 * y + md.phase);
    return s;
}

Vec FourierSeries2D::sample(const CollocationSet& grid) const {
    Vec out(grid.size());
    for (Index p = 0; p < grid.size(); ++p) out[p] = (*this)(grid.points(p, 0), grid.points(p, 1));
    // the band has no DC mode; remove the residual rounding mean
    if (grid.periodic) out.array() -= out.mean();
    return out;
}

FourierSeries2D sample_bandlimited_series(std::uint64_t rng_seed, int kmax) {
    if (kmax < 1) throw Error(ErrorKind::invalid_parameter, "kmax must be positive");
    Rng rng(rng_seed, 0x7433);
    FourierSeries2D f;
    f.kmax = kmax;
    for (int k1 = -kmax; k1 <= kmax; ++k1)
        for (int k2 = -kmax; k2 <= kmax; ++k2) {
            if (k1 == 0 && k2 == 0) continue;
            const double xi = rng.normal();
            const double phi = std::numbers::pi * rng.uniform();
            f.modes.push_back({k1, k2, xi / (1.0 + k1 * k1 + k2 * k2), phi});
        }
    return f;
}

Vec sample_bandlimited_fourier(std::uint64_t rng_seed, int kmax, const CollocationSet& grid) {
    if (!grid.periodic) throw Error(ErrorKind::invalid_grid, "band-limited Fourier sampling needs a periodic grid");
    return sample_bandlimited_series(rng_seed, kmax).sample(grid);
}

std::string to_string(SamplerKind kind) {
    switch (kind) {
        case SamplerKind::gp_gaussian: return "gp_gaussian";
        case SamplerKind::trig_random: return "trig_random";
        case SamplerKind::bandlimited_fourier: return "bandlimited_fourier";
    }
    return "unknown";
}

SamplerKind parse_sampler_kind(std::string_view name) {
    if (name == "gp_gaussian" || name == "gp") return SamplerKind::gp_gaussian;
    if (name == "trig_random" || name == "trig") return SamplerKind::trig_random;
    if (name == "bandlimited_fourier" || name == "fourier") return SamplerKind::bandlimited_fourier;
    throw Error(ErrorKind::config, "unknown sampler kind '" + std::string(name) + "'");
}

}  // namespace krom
