// SPDX-License-Identifier: Apache-2.0

#include "collagan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>

#include "collagan/losses.hpp"

namespace collagan {

namespace {

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    sd = 0.0;
    if (v.empty()) return;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    for (double x : v) sd += (x - mean) * (x - mean);
    sd = std::sqrt(sd / static_cast<double>(v.size()));
}

std::int64_t reflect(std::int64_t i, std::int64_t n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
}

std::string fmt(double v, const char* spec = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::pair<std::int64_t, std::int64_t> plane_dims(const Tensor& t, const char* what) {
    const int r = t.rank();
    if (r < 2) throw ShapeError(std::string(what) + ": need at least 2 axes");
    for (int a = 0; a < r - 2; ++a) {
        if (t.dim(a) != 1) throw ShapeError(std::string(what) + ": axis " + std::to_string(a) + " must be 1");
    }
    return {t.dim(r - 2), t.dim(r - 1)};
}

}  // namespace

double nmse(std::span<const double> x_true, std::span<const double> x_hat) {
    if (x_true.size() != x_hat.size()) throw ShapeError("nmse: size mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x_true.size(); ++i) {
        const double d = x_true[i] - x_hat[i];
        num += d * d;
        den += x_true[i] * x_true[i];
    }
    if (den == 0.0) throw NumericError("nmse: reference image has zero norm");
    return num / den;
}

double nmse(const Tensor& x_true, const Tensor& x_hat) {
    if (x_true.shape() != x_hat.shape()) throw ShapeError("nmse: shape mismatch");
    return nmse(x_true.data(), x_hat.data());
}

double ssim_scalar(const Tensor& x_true, const Tensor& x_hat, int window) {
    if (x_true.shape() != x_hat.shape()) throw ShapeError("ssim_scalar: shape mismatch");
    const auto [h, w] = plane_dims(x_true, "ssim_scalar");
    if (window < 1 || window % 2 == 0) throw std::invalid_argument("ssim_scalar: window must be odd");
    if (window > h || window > w) throw ShapeError("ssim_scalar: window larger than image");
    const double* x = x_true.data().data();
    const double* y = x_hat.data().data();
    const SsimOptions opt;
    double lo = x[0], hi = x[0];
    for (std::int64_t i = 0; i < h * w; ++i) {
        lo = std::min({lo, x[i], y[i]});
        hi = std::max({hi, x[i], y[i]});
    }
    const double range = std::max(hi - lo, opt.min_dynamic_range);
    const double c1 = (opt.k1 * range) * (opt.k1 * range);
    const double c2 = (opt.k2 * range) * (opt.k2 * range);
    const int r = window / 2;
    const double n = static_cast<double>(window) * window;
    double total = 0.0;
    for (std::int64_t py = 0; py < h; ++py) {
        for (std::int64_t px = 0; px < w; ++px) {
            double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
            for (int dy = -r; dy <= r; ++dy) {
                const std::int64_t yy = reflect(py + dy, h);
                for (int dx = -r; dx <= r; ++dx) {
                    const std::int64_t i = yy * w + reflect(px + dx, w);
                    sx += x[i];
                    sy += y[i];
                    sxx += x[i] * x[i];
                    syy += y[i] * y[i];
                    sxy += x[i] * y[i];
                }
            }
            const double mx = sx / n, my = sy / n;
            const double vx = sxx / n - mx * mx;
            const double vy = syy / n - my * my;
            const double cov = sxy / n - mx * my;
            total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    return total / static_cast<double>(h * w);
}

double dice(std::span<const double> gt, std::span<const double> pred) {
    if (gt.size() != pred.size()) throw ShapeError("dice: size mismatch");
    std::size_t a = 0, b = 0, both = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const bool g = gt[i] != 0.0, p = pred[i] != 0.0;
        a += g;
        b += p;
        both += g && p;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

double dice(const Tensor& gt, const Tensor& pred) {
    if (gt.shape() != pred.shape()) throw ShapeError("dice: shape mismatch");
    return dice(gt.data(), pred.data());
}

std::vector<DomainAggregate> MetricsReport::aggregates() const {
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_target;
    for (const auto& r : records) {
        by_target[r.target].first.push_back(r.nmse);
        by_target[r.target].second.push_back(r.ssim);
    }
    std::vector<DomainAggregate> out;
    for (const auto& [target, vals] : by_target) {
        DomainAggregate a;
        a.target = target;
        a.count = vals.first.size();
        mean_std(vals.first, a.nmse_mean, a.nmse_std);
        mean_std(vals.second, a.ssim_mean, a.ssim_std);
        out.push_back(a);
    }
    return out;
}

void MetricsReport::write_csv(std::ostream& os) const {
    os << "tag,subject,slice,target,nmse,ssim\n";
    for (const auto& r : records) {
        os << tag << ',' << r.subject << ',' << r.slice << ',' << kDomainNames.at(static_cast<std::size_t>(r.target))
           << ',' << fmt(r.nmse, "%.17g") << ',' << fmt(r.ssim, "%.17g") << '\n';
    }
}

void MetricsReport::write_table(std::ostream& os) const {
    os << "experiment " << tag << "\n";
    os << "target  n     NMSE mean +- std        SSIM mean +- std\n";
    for (const auto& a : aggregates()) {
        char line[160];
        std::snprintf(line, sizeof line, "%-6s %3zu   %.4f +- %.4f       %.4f +- %.4f\n",
                      kDomainNames.at(static_cast<std::size_t>(a.target)).c_str(), a.count, a.nmse_mean, a.nmse_std,
                      a.ssim_mean, a.ssim_std);
        os << line;
    }
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
    const auto [h, w] = plane_dims(image, "write_pgm");
    auto d = image.data();
    const auto [mn, mx] = std::minmax_element(d.begin(), d.end());
    const double lo = *mn, span = *mx - *mn;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "P5\n" << w << ' ' << h << "\n255\n";
    for (double v : d) {
        const double u = span > 0 ? (v - lo) / span : 0.0;
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0))));
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

Tensor ToySegmenter::segment(const std::vector<Tensor>& images) const {
    if (static_cast<int>(images.size()) != kPhantomDomains) throw ShapeError("segment: expected one image per domain");
    const Tensor& t1 = images[0];
    const Tensor& gd = images[kExclusiveDomain];
    if (t1.shape() != gd.shape()) throw ShapeError("segment: domain images differ in shape");
    auto a = t1.data();
    auto g = gd.data();
    const double t1_max = *std::max_element(a.begin(), a.end());
    std::vector<double> fg_values;
    std::vector<bool> fg(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        fg[i] = a[i] > fg_fraction * t1_max;
        if (fg[i]) fg_values.push_back(g[i]);
    }
    std::vector<double> mask(a.size(), 0.0);
    if (fg_values.empty()) return Tensor::from_data(t1.shape(), std::move(mask));
    auto mid = fg_values.begin() + static_cast<std::ptrdiff_t>(fg_values.size() / 2);
    std::nth_element(fg_values.begin(), mid, fg_values.end());
    const double threshold = lesion_ratio * *mid;
    for (std::size_t i = 0; i < a.size(); ++i) mask[i] = (fg[i] && g[i] > threshold) ? 1.0 : 0.0;
    return Tensor::from_data(t1.shape(), std::move(mask));
}

Tensor impute_domain(const GeneratorNet& net, const DomainSet& set, int target) {
    const int n = net.config().domains;
    if (static_cast<int>(set.images.size()) != n) throw ShapeError("impute: domain count mismatch");
    if (target < 0 || target >= n) throw std::out_of_range("impute: target domain out of range");
    NoGradGuard no_grad;
    const Shape& s = set.images.front().shape();
    std::vector<DomainImage> inputs;
    for (int k = 0; k < n; ++k) {
        if (k == target) continue;
        inputs.push_back({k, reshape(set.images[static_cast<std::size_t>(k)], {1, 1, s[1], s[2]})});
    }
    return reshape(impute(net, inputs, TargetMask(target, n, 1, s[1], s[2])), s);
}

std::vector<Tensor> impute_all_domains(const GeneratorNet& net, const DomainSet& set) {
    std::vector<Tensor> out;
    for (int target = 0; target < net.config().domains; ++target) out.push_back(impute_domain(net, set, target));
    return out;
}

std::vector<EssentialityRow> essentiality_study(const GeneratorNet& net, const std::vector<const DomainSet*>& sets,
                                                const ToySegmenter& segmenter) {
    if (sets.empty()) throw std::invalid_argument("essentiality_study: no images");
    const int n = net.config().domains;
    std::vector<EssentialityRow> rows(static_cast<std::size_t>(n + 1));
    rows[0].label = "Original";
    for (int k = 0; k < n; ++k) {
        rows[static_cast<std::size_t>(k + 1)].label = kDomainNames.at(static_cast<std::size_t>(k)) + "_Colla";
        rows[static_cast<std::size_t>(k + 1)].substituted = k;
    }
    for (const DomainSet* set : sets) {
        rows[0].per_image.push_back(dice(set->lesion_mask, segmenter.segment(set->images)));
        const auto imputed = impute_all_domains(net, *set);
        for (int k = 0; k < n; ++k) {
            auto images = set->images;
            images[static_cast<std::size_t>(k)] = imputed[static_cast<std::size_t>(k)];
            rows[static_cast<std::size_t>(k + 1)].per_image.push_back(dice(set->lesion_mask, segmenter.segment(images)));
        }
    }
    for (auto& r : rows) mean_std(r.per_image, r.dice_mean, r.dice_std);
    return rows;
}

void write_essentiality_csv(std::ostream& os, const std::vector<EssentialityRow>& rows) {
    os << "experiment,substituted,images,dice_mean,dice_std\n";
    for (const auto& r : rows) {
        os << r.label << ',' << (r.substituted < 0 ? std::string("none") : kDomainNames.at(static_cast<std::size_t>(r.substituted)))
           << ',' << r.per_image.size() << ',' << fmt(r.dice_mean, "%.17g") << ',' << fmt(r.dice_std, "%.17g") << '\n';
    }
}

void write_essentiality_table(std::ostream& os, const std::vector<EssentialityRow>& rows) {
    os << "experiment    lesion Dice (mean +- std)   delta vs Original\n";
    const double base = rows.empty() ? 0.0 : rows.front().dice_mean;
    for (const auto& r : rows) {
        char line[160];
        std::snprintf(line, sizeof line, "%-12s  %.4f +- %.4f            %+.4f\n", r.label.c_str(), r.dice_mean, r.dice_std,
                      r.dice_mean - base);
        os << line;
    }
}

}  // namespace collagan
