#pragma once

#include <array>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "netgrowth/error.hpp"

namespace netgrowth {

struct ExpmOptions {
    Eigen::Index max_side = 4096;
};

namespace detail {

template <std::size_t K>
void pade_terms(const Eigen::MatrixXd& a, const std::array<double, K>& b, Eigen::MatrixXd& u,
                Eigen::MatrixXd& v) {
    // Low-degree approximants: U = A * sum odd terms, V = sum even terms.
    const Eigen::Index n = a.rows();
    const Eigen::MatrixXd ident = Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd a2 = a * a;
    Eigen::MatrixXd power = ident;
    Eigen::MatrixXd odd = Eigen::MatrixXd::Zero(n, n);
    v = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t k = 0; k + 1 < K; k += 2) {
        v.noalias() += b[k] * power;
        odd.noalias() += b[k + 1] * power;
        if (k + 2 < K) power = power * a2;
    }
    u.noalias() = a * odd;
}

inline void pade13_terms(const Eigen::MatrixXd& a, Eigen::MatrixXd& u, Eigen::MatrixXd& v) {
    static constexpr std::array<double, 14> b{
        64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
        129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
        1323241920.0,        40840800.0,          960960.0,           16380.0,
        182.0,               1.0};
    const Eigen::Index n = a.rows();
    const Eigen::MatrixXd ident = Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd a2 = a * a;
    const Eigen::MatrixXd a4 = a2 * a2;
    const Eigen::MatrixXd a6 = a4 * a2;
    Eigen::MatrixXd inner = b[13] * a6 + b[11] * a4 + b[9] * a2;
    Eigen::MatrixXd tmp = a6 * inner;
    tmp += b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident;
    u.noalias() = a * tmp;
    inner = b[12] * a6 + b[10] * a4 + b[8] * a2;
    v.noalias() = a6 * inner;
    v += b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident;
}

} // namespace detail

/// exp(m * t) by scaling and squaring with a [13/13] Pade approximant
/// (lower degrees when the norm allows).
inline Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& m, double t = 1.0,
                                          const ExpmOptions& opts = {}) {
    if (m.rows() != m.cols()) throw InputError("matrix_exponential: matrix must be square");
    if (m.rows() > opts.max_side)
        throw InputError("matrix_exponential: side " + std::to_string(m.rows()) + " exceeds cap " +
                         std::to_string(opts.max_side));
    if (!std::isfinite(t)) throw InputError("matrix_exponential: non-finite time");
    if (!m.allFinite()) throw InputError("matrix_exponential: matrix has NaN/Inf entries");

    const Eigen::Index n = m.rows();
    if (n == 0) return {};
    Eigen::MatrixXd a = m * t;
    const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();

    Eigen::MatrixXd u, v;
    int squarings = 0;
    if (norm1 <= 1.495585217958292e-2) {
        detail::pade_terms(a, std::array<double, 4>{120.0, 60.0, 12.0, 1.0}, u, v);
    } else if (norm1 <= 2.539398330063230e-1) {
        detail::pade_terms(a, std::array<double, 6>{30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0}, u, v);
    } else if (norm1 <= 9.504178996162932e-1) {
        detail::pade_terms(
            a, std::array<double, 8>{17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0}, u, v);
    } else if (norm1 <= 2.097847961257068) {
        detail::pade_terms(a,
                           std::array<double, 10>{17643225600.0, 8821612800.0, 2075673600.0, 302702400.0,
                                                  30270240.0, 2162160.0, 110880.0, 3960.0, 90.0, 1.0},
                           u, v);
    } else {
        constexpr double theta13 = 5.371920351148152;
        squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / theta13))));
        if (squarings > 0) a /= std::ldexp(1.0, squarings);
        detail::pade13_terms(a, u, v);
    }

    Eigen::MatrixXd result = (v - u).partialPivLu().solve(v + u);
    for (int s = 0; s < squarings; ++s) result = result * result;
    if (!result.allFinite()) throw NumericError("matrix_exponential: result overflowed");
    return result;
}

} // namespace netgrowth
