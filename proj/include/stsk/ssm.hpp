#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "stsk/errors.hpp"
#include "stsk/tensor.hpp"

namespace stsk::ssm {

// Continuous linear time-invariant system h' = A h + B x, y = C h with a
// timescale delta used for discretization. A is N x N, B and C are length-N
// vectors.
struct ContinuousSSM {
    Tensor A;      // [N,N]
    Tensor B;      // [N]
    Tensor C;      // [N]
    double delta = 0.0;

    std::size_t state_dim() const { return A.rows(); }

    void validate() const {
        if (A.rank() != 2 || A.rows() != A.cols()) throw ShapeError("A must be square");
        if (B.rank() != 1 || B.dim(0) != A.rows()) throw ShapeError("B must be length N");
        if (C.rank() != 1 || C.dim(0) != A.rows()) throw ShapeError("C must be length N");
        if (!(delta > 0.0)) throw InvalidParamError("delta must be > 0");
        if (!A.all_finite() || !B.all_finite() || !C.all_finite() || !std::isfinite(delta))
            throw InvalidParamError("non-finite SSM parameters");
    }
};

struct DiscreteSSM {
    Tensor A_bar;  // [N,N]
    Tensor B_bar;  // [N]
    Tensor C;      // [N]

    std::size_t state_dim() const { return A_bar.rows(); }
};

struct ScanState {
    Tensor h;              // [N]
    std::size_t step = 0;  // frames/tokens consumed so far
};

// ---------------------------------------------------------------------------
// Zero-order hold discretization.
//
// A_bar = exp(dA), B_bar = (dA)^{-1} (exp(dA) - I) dB. Near-singular dA uses
// the series (exp(M)-I) M^{-1} = sum_k M^k / (k+1)!, truncated adaptively so
// the series stays accurate well beyond the switch point (the fixed 8-term
// cut cannot reach 1e-9 at |M| ~ 1).
// ---------------------------------------------------------------------------

inline double zoh_series_switch_norm() { return 1e-4; }

// sum_k M^k/(k+1)!  (== (exp(M)-I) M^{-1} where the inverse exists)
inline Tensor zoh_input_factor_series(const Tensor& m) {
    const std::size_t n = m.rows();
    Tensor acc = identity(n);
    Tensor term = identity(n);
    for (int k = 1; k <= 40; ++k) {
        term = matmul(term, m);
        for (std::size_t i = 0; i < term.numel(); ++i) term[i] /= static_cast<double>(k + 1);
        acc = acc + term;
        if (frob_norm(term) < 1e-17 * (1.0 + frob_norm(acc))) break;
    }
    return acc;
}

// (exp(M)-I) M^{-1} via an explicit solve; requires M nonsingular.
inline Tensor zoh_input_factor_explicit(const Tensor& m) {
    const Tensor e = expm(m) - identity(m.rows());
    // M^{-1} (exp(M)-I) == (exp(M)-I) M^{-1}: both are functions of M.
    return solve(m, e);
}

inline DiscreteSSM discretize_zoh(const ContinuousSSM& ssm) {
    ssm.validate();
    const std::size_t n = ssm.state_dim();
    Tensor m = ssm.delta * ssm.A;
    DiscreteSSM d;
    d.A_bar = expm(m);
    const Tensor factor =
        frob_norm(m) < zoh_series_switch_norm() ? zoh_input_factor_series(m)
                                                : zoh_input_factor_explicit(m);
    Tensor db({n, 1});
    for (std::size_t i = 0; i < n; ++i) db(i, 0) = ssm.delta * ssm.B[i];
    Tensor bb = matmul(factor, db);
    d.B_bar = Tensor({n});
    for (std::size_t i = 0; i < n; ++i) d.B_bar[i] = bb(i, 0);
    d.C = ssm.C;
    return d;
}

// ---------------------------------------------------------------------------
// Scans (Eqs. 5-8): recurrent form and the equivalent causal convolution.
// ---------------------------------------------------------------------------

struct ScanResult {
    std::vector<double> y;
    Tensor h_final;  // [N]
};

inline ScanResult scan_recurrent(const DiscreteSSM& d, const std::vector<double>& x,
                                 const Tensor& h0) {
    const std::size_t n = d.state_dim();
    if (x.empty()) throw ShapeError("scan needs at least one input");
    if (h0.rank() != 1 || h0.dim(0) != n) throw ShapeError("h0 must be length N");
    Tensor h = h0;
    ScanResult r;
    r.y.reserve(x.size());
    Tensor hn({n});
    for (double xt : x) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = d.B_bar[i] * xt;
            for (std::size_t j = 0; j < n; ++j) s += d.A_bar(i, j) * h[j];
            hn[i] = s;
        }
        std::swap(h, hn);
        double yt = 0.0;
        for (std::size_t i = 0; i < n; ++i) yt += d.C[i] * h[i];
        r.y.push_back(yt);
    }
    r.h_final = h;
    return r;
}

inline ScanResult scan_recurrent(const DiscreteSSM& d, const std::vector<double>& x) {
    return scan_recurrent(d, x, Tensor({d.state_dim()}));
}

// Builds K = (C B_bar, C A_bar B_bar, ..., C A_bar^{L-1} B_bar) and convolves.
// LTI only, h0 = 0; kept as a test oracle rather than a hot path.
inline std::vector<double> scan_convolutional(const DiscreteSSM& d, const std::vector<double>& x) {
    const std::size_t n = d.state_dim(), L = x.size();
    if (L == 0) throw ShapeError("scan needs at least one input");
    std::vector<double> kernel(L);
    Tensor v = d.B_bar;  // A_bar^j B_bar
    Tensor vn({n});
    for (std::size_t j = 0; j < L; ++j) {
        double k = 0.0;
        for (std::size_t i = 0; i < n; ++i) k += d.C[i] * v[i];
        kernel[j] = k;
        if (j + 1 < L) {
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                for (std::size_t c = 0; c < n; ++c) s += d.A_bar(i, c) * v[c];
                vn[i] = s;
            }
            std::swap(v, vn);
        }
    }
    std::vector<double> y(L, 0.0);
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t j = 0; j <= t; ++j) y[t] += kernel[j] * x[t - j];
    return y;
}

// ---------------------------------------------------------------------------
// Selective scan (data-dependent parameters, diagonal A).
// ---------------------------------------------------------------------------

// phi(u) = (e^u - 1)/u with a series branch for small |u|.
inline double phi1(double u) {
    if (std::abs(u) < 1e-4) return 1.0 + u * (0.5 + u * (1.0 / 6.0 + u / 24.0));
    return std::expm1(u) / u;
}

// phi'(u) = (e^u (u - 1) + 1)/u^2
inline double phi1_deriv(double u) {
    if (std::abs(u) < 1e-3)
        return 0.5 + u * (1.0 / 3.0 + u * (0.125 + u / 30.0));
    return (std::exp(u) * (u - 1.0) + 1.0) / (u * u);
}

inline double softplus(double x) {
    if (x > 30.0) return x;
    return std::log1p(std::exp(x));
}

struct DiagScanResult {
    Tensor y;        // [L,D]
    Tensor h_final;  // [D,N]
    Tensor h_all;    // [L,D,N] hidden states after each step (kept for backprop)
};

// Core recurrence shared by the plain module and the autodiff node.
//   u      = dt[t][d] * A[d][n]
//   h_t    = exp(u) h_{t-1} + dt[t][d] phi(u) Bv[t][n] * x[t][d]
//   y_t[d] = sum_n Cv[t][n] h_t[d][n]
// Strictly causal in t; per-token ZOH with diagonal A.
inline DiagScanResult scan_selective_diag(const Tensor& A, const Tensor& dt, const Tensor& Bv,
                                          const Tensor& Cv, const Tensor& X, const Tensor& h0,
                                          bool keep_states = false) {
    const std::size_t L = X.rows(), D = X.cols(), N = A.cols();
    if (A.rows() != D) throw ShapeError("A must be [D,N]");
    if (dt.rows() != L || dt.cols() != D) throw ShapeError("dt must be [L,D]");
    if (Bv.rows() != L || Bv.cols() != N || Cv.rows() != L || Cv.cols() != N)
        throw ShapeError("B/C must be [L,N]");
    if (h0.rank() != 2 || h0.rows() != D || h0.cols() != N) throw ShapeError("h0 must be [D,N]");

    DiagScanResult r;
    r.y = Tensor({L, D});
    r.h_final = h0;
    if (keep_states) r.h_all = Tensor({L, D, N});
    Tensor& h = r.h_final;
    for (std::size_t t = 0; t < L; ++t) {
        const double* bt = Bv.data() + t * N;
        const double* ct = Cv.data() + t * N;
        for (std::size_t d = 0; d < D; ++d) {
            const double dtv = dt(t, d);
            if (!(dtv > 0.0)) throw InvalidParamError("non-positive dt in selective scan");
            const double x = X(t, d);
            double* hd = h.data() + d * N;
            const double* ad = A.data() + d * N;
            double yv = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const double u = dtv * ad[n];
                const double hnew = std::exp(u) * hd[n] + dtv * phi1(u) * bt[n] * x;
                hd[n] = hnew;
                yv += ct[n] * hnew;
            }
            r.y(t, d) = yv;
            if (keep_states)
                for (std::size_t n = 0; n < N; ++n) r.h_all(t, d, n) = hd[n];
        }
    }
    return r;
}

// Selective parameterization: each token is projected to (dt, B, C); A is
// shared across tokens and diagonal per channel. dt positivity comes from a
// softplus on the raw projection.
struct SelectiveProj {
    Tensor W_dt;  // [D,D]
    Tensor b_dt;  // [D]
    Tensor W_B;   // [N,D]
    Tensor W_C;   // [N,D]
    Tensor A;     // [D,N], negative entries
};

struct SelectiveInputs {
    Tensor dt;  // [L,D]
    Tensor Bv;  // [L,N]
    Tensor Cv;  // [L,N]
};

inline SelectiveInputs project_selective(const Tensor& tokens, const SelectiveProj& p) {
    const std::size_t L = tokens.rows(), D = tokens.cols(), N = p.W_B.rows();
    if (p.W_dt.rows() != D || p.W_dt.cols() != D || p.b_dt.dim(0) != D)
        throw ShapeError("dt projection must be [D,D] + [D]");
    if (p.W_B.cols() != D || p.W_C.rows() != N || p.W_C.cols() != D)
        throw ShapeError("B/C projections must be [N,D]");
    if (p.A.rows() != D || p.A.cols() != N) throw ShapeError("A must be [D,N]");
    SelectiveInputs s;
    s.dt = matmul(tokens, transpose(p.W_dt));
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t d = 0; d < D; ++d) s.dt(t, d) = softplus(s.dt(t, d) + p.b_dt[d]);
    s.Bv = matmul(tokens, transpose(p.W_B));
    s.Cv = matmul(tokens, transpose(p.W_C));
    return s;
}

struct SelectiveScanResult {
    Tensor y;        // [L,D]
    Tensor h_final;  // [D,N]
};

inline SelectiveScanResult selective_scan(const Tensor& tokens, const SelectiveProj& proj,
                                          const Tensor& h0) {
    const SelectiveInputs s = project_selective(tokens, proj);
    DiagScanResult r = scan_selective_diag(proj.A, s.dt, s.Bv, s.Cv, tokens, h0);
    return {std::move(r.y), std::move(r.h_final)};
}

inline SelectiveScanResult selective_scan(const Tensor& tokens, const SelectiveProj& proj) {
    return selective_scan(tokens, proj, Tensor({tokens.cols(), proj.A.cols()}));
}

// The convolutional form is defined for time-invariant parameters only.
inline std::vector<double> scan_convolutional(const SelectiveProj&, const Tensor&) {
    throw UnsupportedModeError("convolutional scan requires time-invariant parameters");
}

// HiPPO-style negative diagonal init: channel-shared A[d][n] = -(n+1).
inline Tensor default_diag_A(std::size_t channels, std::size_t state_dim) {
    Tensor a({channels, state_dim});
    for (std::size_t d = 0; d < channels; ++d)
        for (std::size_t n = 0; n < state_dim; ++n) a(d, n) = -static_cast<double>(n + 1);
    return a;
}

}  // namespace stsk::ssm
