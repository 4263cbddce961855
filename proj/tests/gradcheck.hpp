#pragma once

// Finite-difference comparison of analytic parameter gradients.

#include "sadet/numeric.hpp"
#include "sadet/sai.hpp"

#include <algorithm>
#include <random>
#include <string>
#include <vector>

namespace gradcheck {

using sadet::Index;
using sadet::SaiParams;
using sadet::Vec;

// ||analytic - numeric|| / max(||analytic||, ||numeric||) over `coords`.
template <typename Loss>
double relative_error(const SaiParams& params, Loss&& loss, const Vec& analytic, const std::vector<Index>& coords,
                      double h)
{
    SaiParams probe = params;
    const Vec base = params.flatten();
    Vec x = base;
    Vec a(static_cast<Index>(coords.size())), n(static_cast<Index>(coords.size()));
    for (std::size_t k = 0; k < coords.size(); ++k) {
        const Index i = coords[k];
        Vec sub(1);
        sub[0] = base[i];
        const auto f = [&](const Vec& v) {
            x[i] = v[0];
            probe.assign(x);
            return loss(probe);
        };
        n[static_cast<Index>(k)] = sadet::finite_diff_gradient(f, sub, h)[0];
        x[i] = base[i];
        a[static_cast<Index>(k)] = analytic[i];
    }
    const double scale = std::max({a.norm(), n.norm(), 1e-300});
    return (a - n).norm() / scale;
}

inline std::vector<Index> all_coords(const SaiParams& p)
{
    std::vector<Index> c(static_cast<std::size_t>(p.size()));
    for (Index i = 0; i < p.size(); ++i) c[static_cast<std::size_t>(i)] = i;
    return c;
}

// Up to `per_tensor` random coordinates from every non-empty tensor.
inline std::vector<Index> sampled_coords(const SaiParams& p, int per_tensor, std::uint64_t seed,
                                         bool include_decoder)
{
    std::mt19937_64 rng(seed);
    std::vector<Index> out;
    Index offset = 0;
    p.for_each([&](const char* name, const sadet::Mat& m) {
        const bool dec = std::string(name).rfind("dec_", 0) == 0;
        if (m.size() > 0 && (include_decoder || !dec)) {
            for (int k = 0; k < per_tensor; ++k) out.push_back(offset + static_cast<Index>(rng() % m.size()));
        }
        offset += m.size();
    });
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

} // namespace gradcheck
