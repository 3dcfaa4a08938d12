#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace testing {

// |a - n| / max(|a|, |n|, floor). Central differences at h = 1e-6 carry
// about 1e-10 of rounding noise, so partials that are exactly zero (the
// attention logit bias, say) need a floor.
inline double rel_error(double a, double n, double floor = 1e-6) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Central differences of f over every coordinate of theta.
inline std::vector<double> central_differences(std::vector<double> theta,
                                               const std::function<double(const std::vector<double>&)>& f,
                                               double h = 1e-6) {
    std::vector<double> g(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double orig = theta[i];
        theta[i] = orig + h;
        const double up = f(theta);
        theta[i] = orig - h;
        const double down = f(theta);
        theta[i] = orig;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& n, double floor = 1e-6) {
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_error(a[i], n[i], floor));
    return worst;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("modmeta_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing
