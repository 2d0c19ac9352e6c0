#include "kikuchi/spectral.hpp"

#include <string>

#include "kikuchi/combinat.hpp"

namespace kikuchi {

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

double norm2(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

std::vector<double> full_spectrum(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols()) throw InvalidArgument("full_spectrum: matrix is not square");
    const double asym = m.rows() == 0 ? 0.0 : (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12) throw InvalidArgument("full_spectrum: matrix asymmetric by " + std::to_string(asym));
    if (m.rows() == 0) return {};
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw InvalidArgument("full_spectrum: eigensolver did not converge");
    const auto& ev = solver.eigenvalues();
    return {ev.data(), ev.data() + ev.size()};
}

std::vector<MomentRow> spectral_moments(std::span<const double> eigs, std::uint32_t max_q) {
    if (eigs.empty()) throw InvalidArgument("spectral_moments: no eigenvalues");
    std::vector<MomentRow> rows;
    const double dim = static_cast<double>(eigs.size());
    double m2 = 0.0;
    for (double l : eigs) m2 += l * l;
    m2 /= dim;
    for (std::uint32_t q = 1; q <= max_q; ++q) {
        double s = 0.0;
        for (double l : eigs) s += std::pow(l * l, q);
        rows.push_back({q, s / dim, to_double(catalan(q)) * std::pow(m2, q)});
    }
    return rows;
}

} // namespace kikuchi
