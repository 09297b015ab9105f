#include "krom/snapshots.hpp"

#include "krom/kernels.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>

namespace krom {

namespace {

[[noreturn]] void format_error(std::size_t offset, const std::string& what) {
    throw Error(ErrorKind::format, "KROMS1 format error at byte " + std::to_string(offset) + ": " + what);
}

std::vector<Vec> nodal_slices(const BurgersTrajectory& tr, const PDEInstance& inst) {
    const Vec x = inst.grid.points.col(0);
    std::vector<Vec> out;
    out.reserve(tr.fields.size());
    for (const auto& f : tr.fields) out.push_back(cells_to_nodes(f, inst.periodic_fv, x));
    return out;
}

// Solution slices of one instance.
std::vector<Vec> solve_instance(const PDEInstance& inst, const SamplerSpec& spec, std::uint64_t seed,
                                const GaussianFieldSampler* gp, std::vector<double>& times) {
    const CollocationSet& grid = inst.grid;
    const Vec g = inst.boundary.size() ? inst.boundary : Vec::Zero(grid.size());
    ExplicitOptions eo;
    eo.dt = inst.dt;
    eo.t_final = inst.t_final;
    eo.save_stride = inst.save_stride;
    eo.save_interval = inst.save_interval;
    switch (inst.kind) {
        case PdeKind::semilinear_elliptic:
        case PdeKind::darcy: {
            const Vec f = spec.amplitude * gp->sample(seed);
            times = {0.0};
            if (inst.kind == PdeKind::darcy) return {solve_darcy(grid, inst.coefficient, f, g)};
            return {solve_semilinear_elliptic(grid, f, g)};
        }
        case PdeKind::burgers: {
            if (grid.dim() != 1) throw Error(ErrorKind::invalid_grid, "burgers snapshots need a 1D grid");
            BurgersOptions bo;
            bo.nu = inst.nu;
            bo.cells = inst.fv_cells > 0 ? inst.fv_cells : 4 * (grid.size() - 1);
            bo.dt = inst.dt;
            bo.t_final = inst.t_final;
            bo.periodic = inst.periodic_fv;
            bo.save_stride = inst.save_stride;
            bo.save_interval = inst.save_interval;
            const TrigSeries1D ic = sample_trig_ic_1d(seed, spec.n_terms);
            const Vec u0 = spec.amplitude * ic.sample(cell_centers(bo.cells));
            const BurgersTrajectory tr = solve_burgers(u0, bo);
            times = tr.times;
            return nodal_slices(tr, inst);
        }
        case PdeKind::allen_cahn: {
            const Vec u0 = spec.amplitude * sample_trig_ic_2d(seed).sample(grid);
            const TimeSeries tr = solve_allen_cahn(u0, inst.epsilon, grid, eo);
            times = tr.times;
            return tr.fields;
        }
        case PdeKind::navier_stokes: {
            const Vec w0 = spec.amplitude * sample_bandlimited_fourier(seed, spec.kmax, grid);
            const TimeSeries tr = solve_ns_vorticity(w0, inst.nu, grid, eo);
            times = tr.times;
            return tr.fields;
        }
    }
    return {};
}

}  // namespace

SnapshotLibrary build_library(const PDEInstance& instance, const SamplerSpec& sampler, Index n) {
    if (n < 1) throw Error(ErrorKind::invalid_parameter, "library size must be at least 1");
    const bool stationary = instance.kind == PdeKind::semilinear_elliptic || instance.kind == PdeKind::darcy;
    std::optional<GaussianFieldSampler> gp;
    if (stationary) gp.emplace(instance.grid, sampler.sigma);

    SnapshotLibrary lib;
    lib.kind = instance.kind;
    lib.grid = instance.grid;
    lib.n_instances = n;
    std::vector<Vec> cols;
    for (Index i = 0; i < n; ++i) {
        const std::uint64_t seed = derive_seed(sampler.seed, static_cast<std::uint64_t>(i));
        std::vector<double> times;
        std::vector<Vec> slices;
        try {
            slices = solve_instance(instance, sampler, seed, gp ? &*gp : nullptr, times);
        } catch (const Error& e) {
            throw Error(e.kind(), "library generation failed for seed " + std::to_string(seed) + ": " + e.what());
        }
        if (i == 0) lib.n_times = static_cast<Index>(slices.size());
        if (static_cast<Index>(slices.size()) != lib.n_times)
            throw Error(ErrorKind::numeric, "instance with seed " + std::to_string(seed) + " saved a different number of slices");
        for (size_t t = 0; t < slices.size(); ++t) {
            if (!slices[t].allFinite())
                throw Error(ErrorKind::blow_up, "library generation failed for seed " + std::to_string(seed) + ": non-finite field");
            cols.push_back(std::move(slices[t]));
            lib.provenance.push_back({seed, i, static_cast<Index>(t), times[t], 0.0});
        }
    }
    lib.S.resize(instance.grid.size(), static_cast<Index>(cols.size()));
    for (size_t j = 0; j < cols.size(); ++j) lib.S.col(static_cast<Index>(j)) = cols[j];

    lib.meta["sampler"] = to_string(sampler.kind);
    lib.meta["sampler_seed"] = std::to_string(sampler.seed);
    lib.meta["sigma"] = format_double(sampler.sigma);
    lib.meta["amplitude"] = format_double(sampler.amplitude);
    if (!stationary) {
        lib.meta["t_final"] = format_double(instance.t_final);
        lib.meta["dt"] = format_double(instance.dt);
        lib.meta["save_stride"] = std::to_string(instance.save_stride);
        lib.meta["save_interval"] = format_double(instance.save_interval);
    }
    return lib;
}

std::vector<double> burgers_shifts() {
    std::vector<double> s;
    for (int k = -4; k <= 4; ++k) s.push_back(0.2 * k);
    return s;
}

SnapshotLibrary shift_augment(const SnapshotLibrary& library, const std::vector<double>& shifts) {
    const CollocationSet& grid = library.grid;
    if (grid.dim() != 1 || !grid.is_tensor())
        throw Error(ErrorKind::invalid_parameter, "unsupported augmentation: shifts need a 1D grid library");
    const double period = grid.bounds(0, 1) - grid.bounds(0, 0);
    const Index M = grid.size();
    const Index np = grid.periodic ? M : M - 1;  // distinct nodes of one period
    const double h = period / static_cast<double>(np);

    SnapshotLibrary out = library;
    const Index n0 = library.n_cols();
    out.S.resize(M, n0 * static_cast<Index>(1 + shifts.size()));
    out.S.leftCols(n0) = library.S;
    for (size_t k = 0; k < shifts.size(); ++k) {
        const double s = shifts[k];
        const double q = s / h;
        const double qr = std::round(q);
        const bool aligned = std::abs(q - qr) < 1e-9;
        for (Index c = 0; c < n0; ++c) {
            const auto u = library.S.col(c);
            auto v = out.S.col(n0 * static_cast<Index>(k + 1) + c);
            for (Index i = 0; i < np; ++i) {
                double val;
                if (aligned) {
                    const auto src = static_cast<Index>(((static_cast<long long>(i) - static_cast<long long>(qr)) % np + np) % np);
                    val = u[src];
                } else {
                    const double src = static_cast<double>(i) - q;
                    const double fl = std::floor(src);
                    const double t = src - fl;
                    const auto i0 = static_cast<Index>(((static_cast<long long>(fl) % np) + np) % np);
                    const Index i1 = (i0 + 1) % np;
                    val = (1.0 - t) * u[i0] + t * u[i1];
                }
                v[i] = val;
            }
            if (np < M) v[M - 1] = v[0];
            ColumnRecord r = library.provenance[static_cast<size_t>(c)];
            r.shift += s;
            r.instance += library.n_instances * static_cast<Index>(k + 1);
            out.provenance.push_back(r);
        }
    }
    out.n_instances = library.n_instances * static_cast<Index>(1 + shifts.size());
    if (!grid.periodic) out.meta["shift_caveat"] = "circular shifts applied on a bounded grid";
    out.meta["n_shifts"] = std::to_string(shifts.size());
    return out;
}

GreedySelection greedy_select(const SnapshotLibrary& library, Index m, double tol) {
    const Index n = library.n_cols();
    if (m < 0 || m > n) throw Error(ErrorKind::invalid_parameter, "cannot select more columns than the library holds");
    GreedySelection sel;
    Mat R = library.S;
    std::vector<char> taken(static_cast<size_t>(n), 0);
    double first = 0.0;
    for (Index k = 0; k < m; ++k) {
        Index best = -1;
        double bn = -1.0;
        for (Index j = 0; j < n; ++j) {
            if (taken[static_cast<size_t>(j)]) continue;
            const double r = R.col(j).norm();
            if (r > bn) {
                bn = r;
                best = j;
            }
        }
        if (k == 0) first = bn;
        if (best < 0 || bn <= tol * std::max(first, 1e-300)) {
            sel.note = "library rank exhausted after " + std::to_string(k) + " picks";
            break;
        }
        taken[static_cast<size_t>(best)] = 1;
        sel.indices.push_back(best);
        sel.residuals.push_back(bn);
        Vec q = R.col(best) / bn;
        // project twice so later residuals stay orthogonal in floating point
        const Eigen::RowVectorXd c = q.transpose() * R;
        R.noalias() -= q * c;
        const Eigen::RowVectorXd c2 = q.transpose() * R;
        R.noalias() -= q * c2;
    }
    return sel;
}

SnapshotLibrary take_columns(const SnapshotLibrary& library, const std::vector<Index>& columns) {
    SnapshotLibrary out;
    out.kind = library.kind;
    out.grid = library.grid;
    out.meta = library.meta;
    out.n_times = library.n_times;
    out.S.resize(library.S.rows(), static_cast<Index>(columns.size()));
    std::vector<char> seen(static_cast<size_t>(library.n_instances), 0);
    for (size_t j = 0; j < columns.size(); ++j) {
        const Index c = columns[j];
        if (c < 0 || c >= library.n_cols()) throw Error(ErrorKind::invalid_parameter, "column index out of range");
        out.S.col(static_cast<Index>(j)) = library.S.col(c);
        const auto& r = library.provenance[static_cast<size_t>(c)];
        out.provenance.push_back(r);
        if (r.instance >= 0 && r.instance < library.n_instances) seen[static_cast<size_t>(r.instance)] = 1;
    }
    out.n_instances = 0;
    for (char s : seen) out.n_instances += s;
    return out;
}

SnapshotLibrary take_instances(const SnapshotLibrary& library, Index n) {
    if (n < 1 || n > library.n_instances) throw Error(ErrorKind::invalid_parameter, "instance prefix out of range");
    std::vector<Index> cols;
    for (Index j = 0; j < library.n_cols(); ++j)
        if (library.provenance[static_cast<size_t>(j)].instance < n) cols.push_back(j);
    return take_columns(library, cols);
}

// ---------------------------------------------------------------------------------------------
// KROMS1 files

void write_library(const SnapshotLibrary& lib, std::ostream& out) {
    const CollocationSet& g = lib.grid;
    std::string header = "KROMS1 " + std::to_string(lib.S.rows()) + " " + std::to_string(lib.S.cols()) + " " +
                         std::to_string(g.dim());
    for (Index r : g.resolution) header += " " + std::to_string(r);
    header += "\n";
    out.write(header.data(), static_cast<std::streamsize>(header.size()));

    std::vector<unsigned char> buf(static_cast<size_t>(lib.S.size()) * 8);
    for (Index i = 0; i < lib.S.size(); ++i) {
        auto bits = std::bit_cast<std::uint64_t>(lib.S.data()[i]);
        for (int b = 0; b < 8; ++b) buf[static_cast<size_t>(i) * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));

    std::ostringstream p;
    p << "kind=" << to_string(lib.kind) << "\n";
    p << "periodic=" << (g.periodic ? 1 : 0) << "\n";
    p << "bounds=";
    for (int a = 0; a < g.dim(); ++a)
        p << (a ? "," : "") << format_double(g.bounds(a, 0)) << "," << format_double(g.bounds(a, 1));
    p << "\n";
    p << "n_instances=" << lib.n_instances << "\n";
    p << "n_times=" << lib.n_times << "\n";
    for (size_t j = 0; j < lib.provenance.size(); ++j) {
        const auto& r = lib.provenance[j];
        p << "col=" << j << "," << r.seed << "," << r.instance << "," << r.time_index << "," << format_double(r.time)
          << "," << format_double(r.shift) << "\n";
    }
    for (const auto& [k, v] : lib.meta) p << "meta." << k << "=" << v << "\n";
    const std::string s = p.str();
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
    if (!out) throw Error(ErrorKind::format, "failed to write snapshot library");
}

void save_library(const SnapshotLibrary& library, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::config, "cannot open '" + path + "' for writing");
    write_library(library, f);
}

namespace {

template <typename T>
T parse_number(std::string_view tok, std::size_t offset, const char* what) {
    T v{};
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
        format_error(offset, std::string("expected ") + what + ", found '" + std::string(tok) + "'");
    return v;
}

std::vector<std::pair<std::string_view, std::size_t>> split(std::string_view s, char sep, std::size_t base) {
    std::vector<std::pair<std::string_view, std::size_t>> out;
    std::size_t i = 0;
    while (i <= s.size()) {
        if (sep == ' ')
            while (i < s.size() && s[i] == ' ') ++i;
        if (i >= s.size()) break;
        std::size_t j = s.find(sep, i);
        if (j == std::string_view::npos) j = s.size();
        out.emplace_back(s.substr(i, j - i), base + i);
        i = j + 1;
    }
    return out;
}

}  // namespace

SnapshotLibrary read_library(std::istream& in) {
    std::string header;
    char ch;
    while (header.size() < 4096 && in.get(ch) && ch != '\n') header.push_back(ch);
    if (header.compare(0, 6, "KROMS1") != 0 || (header.size() > 6 && header[6] != ' '))
        format_error(0, "expected magic 'KROMS1'");
    if (!in || ch != '\n') format_error(header.size(), "header line is not terminated");
    const auto toks = split(header, ' ', 0);
    if (toks.size() < 4) format_error(header.size(), "header needs 'KROMS1 <M_grid> <n_cols> <dim> <res...>'");
    const auto M = parse_number<long long>(toks[1].first, toks[1].second, "grid size");
    const auto n = parse_number<long long>(toks[2].first, toks[2].second, "column count");
    const auto dim = parse_number<int>(toks[3].first, toks[3].second, "dimension");
    if (M < 1 || n < 0) format_error(toks[1].second, "sizes must be positive");
    if (dim < 1 || dim > 3) format_error(toks[3].second, "dimension must be 1, 2 or 3");
    if (static_cast<int>(toks.size()) != 4 + dim) format_error(header.size(), "expected one resolution per axis");
    std::vector<Index> res;
    long long prod = 1;
    for (int a = 0; a < dim; ++a) {
        const auto& t = toks[4 + static_cast<size_t>(a)];
        res.push_back(parse_number<long long>(t.first, t.second, "resolution"));
        prod *= res.back();
    }
    if (prod != M) format_error(toks[4].second, "resolutions do not multiply to M_grid");

    const std::size_t payload_at = header.size() + 1;
    const std::size_t bytes = static_cast<std::size_t>(M) * static_cast<std::size_t>(n) * 8;
    std::vector<unsigned char> buf(bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got != bytes)
        format_error(payload_at + got, "truncated payload, expected " + std::to_string(bytes) + " bytes of column data");
    Mat S(M, n);
    for (Index i = 0; i < S.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[static_cast<size_t>(i) * 8 + b]) << (8 * b);
        S.data()[i] = std::bit_cast<double>(bits);
    }

    SnapshotLibrary lib;
    lib.S = std::move(S);
    Mat bounds = unit_box(dim);
    bool periodic = false;
    bool have_kind = false;
    std::size_t offset = payload_at + bytes;
    std::string line;
    while (std::getline(in, line)) {
        const std::size_t at = offset;
        offset += line.size() + 1;
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) format_error(at, "provenance line without '='");
        const std::string key = line.substr(0, eq);
        const std::string_view val = std::string_view(line).substr(eq + 1);
        const std::size_t vat = at + eq + 1;
        if (key == "kind") {
            try {
                lib.kind = parse_pde_kind(val);
            } catch (const Error&) {
                format_error(vat, "unknown pde kind");
            }
            have_kind = true;
        } else if (key == "periodic") {
            periodic = parse_number<int>(val, vat, "0 or 1") != 0;
        } else if (key == "bounds") {
            const auto parts = split(val, ',', vat);
            if (static_cast<int>(parts.size()) != 2 * dim) format_error(vat, "expected 2 bounds per axis");
            for (int a = 0; a < dim; ++a) {
                bounds(a, 0) = parse_number<double>(parts[2 * a].first, parts[2 * a].second, "number");
                bounds(a, 1) = parse_number<double>(parts[2 * a + 1].first, parts[2 * a + 1].second, "number");
            }
        } else if (key == "n_instances") {
            lib.n_instances = parse_number<long long>(val, vat, "integer");
        } else if (key == "n_times") {
            lib.n_times = parse_number<long long>(val, vat, "integer");
        } else if (key == "col") {
            const auto parts = split(val, ',', vat);
            if (parts.size() != 6) format_error(vat, "column record needs 6 fields");
            const auto j = parse_number<long long>(parts[0].first, parts[0].second, "column index");
            if (j != static_cast<long long>(lib.provenance.size())) format_error(vat, "column records out of order");
            ColumnRecord r;
            r.seed = parse_number<std::uint64_t>(parts[1].first, parts[1].second, "seed");
            r.instance = parse_number<long long>(parts[2].first, parts[2].second, "instance");
            r.time_index = parse_number<long long>(parts[3].first, parts[3].second, "time index");
            r.time = parse_number<double>(parts[4].first, parts[4].second, "time");
            r.shift = parse_number<double>(parts[5].first, parts[5].second, "shift");
            lib.provenance.push_back(r);
        } else if (key.rfind("meta.", 0) == 0) {
            lib.meta[key.substr(5)] = std::string(val);
        } else {
            lib.meta[key] = std::string(val);
        }
    }
    if (!have_kind) format_error(offset, "provenance block lacks 'kind='");
    if (static_cast<long long>(lib.provenance.size()) != n)
        format_error(offset, "expected " + std::to_string(n) + " column records, found " + std::to_string(lib.provenance.size()));
    lib.grid = periodic ? make_periodic_grid(bounds, res) : make_grid(bounds, res);
    return lib;
}

SnapshotLibrary load_library(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::config, "cannot open snapshot file '" + path + "'");
    return read_library(f);
}

}  // namespace krom
