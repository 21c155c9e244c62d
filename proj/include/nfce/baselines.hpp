#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "nfce/channel.hpp"
#include "nfce/dataset.hpp"
#include "nfce/errors.hpp"
#include "nfce/signal.hpp"

namespace nfce {

// Per pilot column the observation is Y[:,q] = H[:,q] s_q + n, so least
// squares reduces to dividing out the known symbol.
inline CMatrix ls_estimate(const ReceivedBlock& yb, const PilotBlock& pilots) {
    const CMatrix& y = yb.y;
    NFCE_REQUIRE(y.rows >= 1 && y.cols >= 1, "ls_estimate: empty observation");
    NFCE_REQUIRE(y.cols == pilots.q(), "ls_estimate: pilot length mismatch");
    pilots.validate();  // rejects zero symbols before any division
    CMatrix h(y.rows, y.cols);
    for (std::size_t q = 0; q < y.cols; ++q) {
        const cplx s = pilots.symbol(q);
        for (std::size_t n = 0; n < y.rows; ++n) h.at(n, q) = y.at(n, q) / s;
    }
    return h;
}

// Column-major stacking of an N x Q block into length-NQ form; the order the
// covariance and LMMSE filter are expressed in.
inline CVector vec_channel(const CMatrix& h) {
    CVector v(h.rows * h.cols);
    for (std::size_t q = 0; q < h.cols; ++q)
        for (std::size_t n = 0; n < h.rows; ++n) v[q * h.rows + n] = h.at(n, q);
    return v;
}

inline CMatrix unvec_channel(const CVector& v, std::size_t rows, std::size_t cols) {
    NFCE_REQUIRE(v.size() == rows * cols, "unvec_channel: size mismatch");
    CMatrix h(rows, cols);
    for (std::size_t q = 0; q < cols; ++q)
        for (std::size_t n = 0; n < rows; ++n) h.at(n, q) = v[q * rows + n];
    return h;
}

// Empirical channel prior for the linear MMSE filter: uncentered sample
// covariance of the vectorized channel (the synthesized channel is zero-mean
// by phase construction) plus diagonal loading 1e-6 * trace / NQ.
struct CovarianceEstimate {
    CMatrix r;  // NQ x NQ Hermitian PSD
    std::size_t samples = 0;
};

inline CovarianceEstimate estimate_covariance(const std::vector<CMatrix>& channels) {
    NFCE_REQUIRE(!channels.empty(), "estimate_covariance: no samples");
    const std::size_t rows = channels.front().rows, cols = channels.front().cols;
    const std::size_t d = rows * cols;
    CovarianceEstimate out;
    out.r = CMatrix(d, d);
    out.samples = channels.size();

    for (const CMatrix& h : channels) {
        NFCE_REQUIRE(h.rows == rows && h.cols == cols,
                     "estimate_covariance: inconsistent sample shapes");
        const CVector v = vec_channel(h);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i; j < d; ++j)
                out.r.at(i, j) += v[i] * std::conj(v[j]);
    }
    const double inv_m = 1.0 / static_cast<double>(channels.size());
    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        out.r.at(i, i) = cplx(out.r.at(i, i).real() * inv_m, 0.0);
        trace += out.r.at(i, i).real();
        for (std::size_t j = i + 1; j < d; ++j) {
            out.r.at(i, j) *= inv_m;
            out.r.at(j, i) = std::conj(out.r.at(i, j));  // Hermitian by mirror
        }
    }
    const double loading = 1e-6 * trace / static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) out.r.at(i, i) += loading;
    return out;
}

// Prior from the training split only; every slot of every train episode
// contributes one vectorized channel sample.
inline CovarianceEstimate train_covariance(const Dataset& ds) {
    std::vector<CMatrix> samples;
    for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
        if (ds.meta.is_val(e)) continue;
        for (const SlotRecord& slot : ds.episodes[e].slots)
            samples.push_back(slot.h_true);
    }
    NFCE_REQUIRE(!samples.empty(), "train_covariance: dataset has no train slots");
    return estimate_covariance(samples);
}

namespace detail_la {

// Lower-triangular factor L with A = L L^H for Hermitian positive-definite A.
inline CMatrix cholesky(const CMatrix& a, const std::string& what) {
    NFCE_REQUIRE(a.rows == a.cols && a.rows >= 1, what + ": matrix must be square");
    const std::size_t n = a.rows;
    CMatrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = a.at(j, j).real();
        for (std::size_t k = 0; k < j; ++k) d -= std::norm(l.at(j, k));
        if (!(d > 0.0) || !std::isfinite(d))
            throw NumericError(what + ": system singular at pivot " + std::to_string(j));
        l.at(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            cplx s = a.at(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l.at(i, k) * std::conj(l.at(j, k));
            l.at(i, j) = s / l.at(j, j).real();
        }
    }
    return l;
}

// Solves A x = b given the Cholesky factor of A (forward then adjoint back
// substitution).
inline CVector chol_solve(const CMatrix& l, const CVector& b) {
    const std::size_t n = l.rows;
    NFCE_REQUIRE(b.size() == n, "chol_solve: size mismatch");
    CVector y(n);
    for (std::size_t i = 0; i < n; ++i) {
        cplx s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l.at(i, k) * y[k];
        y[i] = s / l.at(i, i).real();
    }
    CVector x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        cplx s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= std::conj(l.at(k, ii)) * x[k];
        x[ii] = s / l.at(ii, ii).real();
    }
    return x;
}

}  // namespace detail_la

// Wiener filter on the vectorized LS estimate. With diagonal pilots of
// per-symbol energy E_s/Q the LS error is white with per-entry variance
// sigma^2 Q / E_s, so the filter is R (R + sigma_e^2 I)^{-1}.
inline CMatrix lmmse_estimate(const ReceivedBlock& yb, const PilotBlock& pilots,
                              const CovarianceEstimate& cov, double sigma_sq) {
    NFCE_REQUIRE(sigma_sq >= 0.0, "lmmse_estimate: sigma^2 must be >= 0");
    const CMatrix h_ls = ls_estimate(yb, pilots);
    const std::size_t d = h_ls.rows * h_ls.cols;
    NFCE_REQUIRE(cov.r.rows == d && cov.r.cols == d,
                 "lmmse_estimate: covariance dimension mismatch");

    const double sigma_e_sq =
        sigma_sq * static_cast<double>(pilots.q()) / pilots.energy();
    CMatrix system = cov.r;
    for (std::size_t i = 0; i < d; ++i) system.at(i, i) += sigma_e_sq;

    const CMatrix l = detail_la::cholesky(system, "lmmse_estimate");
    const CVector z = detail_la::chol_solve(l, vec_channel(h_ls));
    CVector est(d);
    for (std::size_t i = 0; i < d; ++i) {
        cplx s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += cov.r.at(i, j) * z[j];
        est[i] = s;
    }
    return unvec_channel(est, h_ls.rows, h_ls.cols);
}

}  // namespace nfce
