#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "nfce/channel.hpp"
#include "nfce/config.hpp"
#include "nfce/errors.hpp"
#include "nfce/rng.hpp"

namespace nfce {

// Pilot block for one slot: S is Q x Q diagonal, entry (q,q) is the symbol
// transmitted at slot-use q. Diagonal structure makes the columns exactly
// orthogonal and keeps the per-column observation Y[:,q] = H[:,q] s_q.
struct PilotBlock {
    CMatrix S;

    std::size_t q() const { return S.cols; }
    cplx symbol(std::size_t idx) const { return S.at(idx, idx); }

    double energy() const {
        double e = 0.0;
        for (const cplx& v : S.a) e += std::norm(v);
        return e;
    }

    void validate(double es_expected = -1.0) const {
        NFCE_REQUIRE(S.rows == S.cols && S.rows >= 1, "pilot block must be square");
        for (std::size_t r = 0; r < S.rows; ++r)
            for (std::size_t c = 0; c < S.cols; ++c)
                if (r != c)
                    NFCE_REQUIRE(std::abs(S.at(r, c)) == 0.0,
                                 "pilot block must be diagonal");
        for (std::size_t q = 0; q < S.cols; ++q)
            NFCE_REQUIRE(std::abs(symbol(q)) > 0.0, "pilot symbols must be nonzero");
        if (es_expected > 0.0)
            NFCE_REQUIRE(std::abs(energy() - es_expected) < 1e-9 * es_expected,
                         "pilot energy does not match configured E_s");
    }
};

// Deterministic unit-modulus pilots with DFT phases, scaled so that
// trace(S S^H) = E_s (per-symbol power E_s / Q).
inline PilotBlock make_pilots(std::size_t q_len, double es) {
    NFCE_REQUIRE(q_len >= 1, "make_pilots: Q must be >= 1");
    NFCE_REQUIRE(es > 0.0, "make_pilots: E_s must be > 0");
    PilotBlock out;
    out.S = CMatrix(q_len, q_len);
    const double mag = std::sqrt(es / static_cast<double>(q_len));
    for (std::size_t q = 0; q < q_len; ++q) {
        const double phase = -2.0 * M_PI * static_cast<double>(q) / static_cast<double>(q_len);
        out.S.at(q, q) = mag * cplx(std::cos(phase), std::sin(phase));
    }
    return out;
}

// Noise power for a target SNR against a frozen signal-power reference:
// sigma^2 = signal_power * 10^(-snr_db / 10).
inline double snr_to_sigma_sq(double snr_db, double signal_power) {
    NFCE_REQUIRE(signal_power > 0.0, "snr_to_sigma_sq: signal power must be > 0");
    return signal_power * std::pow(10.0, -snr_db / 10.0);
}

struct ReceivedBlock {
    CMatrix y;  // N x Q
};

// Y[:,q] = H[:,q] s_q + n_q with n ~ CN(0, sigma^2 I). Noise is drawn as
// standard complex normals scaled by sigma, so paired seeds stay paired
// across different SNR points.
inline ReceivedBlock receive_block(const CMatrix& h, const PilotBlock& pilots,
                                   double sigma_sq, Rng& rng) {
    NFCE_REQUIRE(h.rows >= 1 && h.cols >= 1, "receive_block: empty channel");
    NFCE_REQUIRE(h.cols == pilots.q(), "receive_block: pilot length mismatch");
    NFCE_REQUIRE(sigma_sq >= 0.0, "receive_block: sigma^2 must be >= 0");
    const double sigma = std::sqrt(sigma_sq);
    ReceivedBlock out;
    out.y = CMatrix(h.rows, h.cols);
    for (std::size_t q = 0; q < h.cols; ++q) {
        const cplx s = pilots.symbol(q);
        for (std::size_t n = 0; n < h.rows; ++n)
            out.y.at(n, q) = h.at(n, q) * s + sigma * rng.cnormal();
    }
    return out;
}

// N x Q block with the slot channel replicated across the Q pilot columns.
inline CMatrix replicate_channel(const CVector& h, std::size_t q_len) {
    NFCE_REQUIRE(!h.empty() && q_len >= 1, "replicate_channel: empty input");
    CMatrix out(h.size(), q_len);
    for (std::size_t n = 0; n < h.size(); ++n)
        for (std::size_t q = 0; q < q_len; ++q) out.at(n, q) = h[n];
    return out;
}

}  // namespace nfce
