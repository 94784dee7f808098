// SPDX-License-Identifier: Apache-2.0

#include "collagan/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

namespace collagan {

namespace {

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

Rng derived_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    for (auto k : keys) {
        words.push_back(static_cast<std::uint32_t>(k));
        words.push_back(static_cast<std::uint32_t>(k >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return Rng(seq);
}

// Point at relative polar position (r, phi) inside an ellipse.
void place_inside(const Ellipse& host, double r, double phi, double& x, double& y) {
    const double lx = r * host.ax * std::cos(phi);
    const double ly = r * host.ay * std::sin(phi);
    const double c = std::cos(host.theta), s = std::sin(host.theta);
    x = host.cx + c * lx - s * ly;
    y = host.cy + s * lx + c * ly;
}

Ellipse random_blob(Rng& rng, const Ellipse& host, double r_max, double a_lo, double a_hi, double value,
                    PrimitiveKind kind) {
    Ellipse e{};
    place_inside(host, r_max * std::sqrt(uniform01(rng)), uniform(rng, 0.0, 2.0 * std::numbers::pi), e.cx, e.cy);
    e.ax = uniform(rng, a_lo, a_hi);
    e.ay = uniform(rng, a_lo, a_hi);
    e.theta = uniform(rng, 0.0, std::numbers::pi);
    e.value = value;
    e.kind = kind;
    return e;
}

void validate_dims(int height, int width) {
    if (height < 32 || width < 32 || height > 1024 || width > 1024 || height % 32 != 0 || width % 32 != 0) {
        throw std::invalid_argument("phantom: image size must be a multiple of 32 in [32, 1024], got " +
                                    std::to_string(height) + "x" + std::to_string(width));
    }
}

Tensor copy_image(const Tensor& t) { return Tensor::from_data(t.shape(), {t.data().begin(), t.data().end()}); }

// Bilinear sample of plane p (h x w) at (y, x); zero outside.
double bilinear(const double* p, std::int64_t h, std::int64_t w, double y, double x) {
    const double fy = std::floor(y), fx = std::floor(x);
    const auto y0 = static_cast<std::int64_t>(fy), x0 = static_cast<std::int64_t>(fx);
    const double wy = y - fy, wx = x - fx;
    auto at = [&](std::int64_t yy, std::int64_t xx) {
        return (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0 : p[yy * w + xx];
    };
    return (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
           wy * ((1 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1));
}

Tensor transform_plane(const Tensor& image, const AugmentParams& params, bool binarize) {
    const std::int64_t h = image.dim(1), w = image.dim(2);
    const double* src = image.data().data();
    std::vector<double> out(static_cast<std::size_t>(h * w));
    const double cy = 0.5 * static_cast<double>(h - 1), cx = 0.5 * static_cast<double>(w - 1);
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const std::int64_t xs = params.flip ? w - 1 - x : x;
            double v;
            if (params.scale == 1.0) {
                v = src[y * w + xs];
            } else {
                v = bilinear(src, h, w, cy + (static_cast<double>(y) - cy) / params.scale,
                             cx + (static_cast<double>(xs) - cx) / params.scale);
            }
            if (binarize) v = v >= 0.5 ? 1.0 : 0.0;
            out[static_cast<std::size_t>(y * w + x)] = v;
        }
    }
    return Tensor::from_data(image.shape(), std::move(out));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    auto da = a.data(), db = b.data();
    return std::memcmp(da.data(), db.data(), da.size() * sizeof(double)) == 0;
}

std::string subject_file(int subject) {
    std::ostringstream os;
    os << "subject_" << std::setw(3) << std::setfill('0') << subject << ".snap";
    return os.str();
}

}  // namespace

int domain_index(const std::string& name) {
    for (int i = 0; i < kPhantomDomains; ++i) {
        if (kDomainNames[static_cast<std::size_t>(i)] == name) return i;
    }
    return -1;
}

bool Ellipse::contains(double x, double y) const {
    const double c = std::cos(theta), s = std::sin(theta);
    const double dx = x - cx, dy = y - cy;
    const double u = (c * dx + s * dy) / ax;
    const double v = (-s * dx + c * dy) / ay;
    return u * u + v * v <= 1.0;
}

double ContrastTransform::apply(int domain, double t, bool exclusive_lesion) const {
    switch (domain) {
        case 0: return 0.15 + 0.85 * t;
        case 1: return 1.0 - 0.8 * t;
        case 2: return 0.1 + 0.9 * std::pow(t, 1.5);
        case 3: return 0.1 + 0.6 * t + (exclusive_lesion ? exclusive_gain : 0.0);
        default: throw std::out_of_range("contrast: domain " + std::to_string(domain));
    }
}

std::string split_name(Split split) {
    switch (split) {
        case Split::kTrain: return "train";
        case Split::kVal: return "val";
        case Split::kTest: return "test";
    }
    return "?";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::kTrain;
    if (name == "val") return Split::kVal;
    if (name == "test") return Split::kTest;
    throw FormatError("unknown split '" + name + "'");
}

std::vector<const DomainSet*> Dataset::select(Split split) const {
    std::vector<const DomainSet*> out;
    for (const auto& s : sets) {
        if (subject_split.at(static_cast<std::size_t>(s.subject)) == split) out.push_back(&s);
    }
    return out;
}

bool Dataset::operator==(const Dataset& o) const {
    if (height != o.height || width != o.width || slices_per_subject != o.slices_per_subject || seed != o.seed ||
        subject_split != o.subject_split || sets.size() != o.sets.size()) {
        return false;
    }
    for (std::size_t i = 0; i < sets.size(); ++i) {
        const auto &a = sets[i], &b = o.sets[i];
        if (a.subject != b.subject || a.slice != b.slice || a.images.size() != b.images.size()) return false;
        if (!bitwise_equal(a.lesion_mask, b.lesion_mask)) return false;
        for (std::size_t k = 0; k < a.images.size(); ++k) {
            if (!bitwise_equal(a.images[k], b.images[k])) return false;
        }
    }
    return true;
}

PhantomScene make_scene(int subject, int slice, int slices_per_subject, std::uint64_t seed) {
    Rng anatomy = derived_rng(seed, {static_cast<std::uint64_t>(subject)});
    Rng detail = derived_rng(seed, {static_cast<std::uint64_t>(subject), static_cast<std::uint64_t>(slice) + 1});

    // Axial position in (-1, 1); the head narrows away from the middle slice.
    const double z = 2.0 * (slice + 0.5) / slices_per_subject - 1.0;
    const double extent = std::sqrt(1.0 - 0.5 * z * z);

    PhantomScene scene{subject, slice, {}};
    Ellipse head{};
    head.cx = 0.5 + uniform(anatomy, -0.02, 0.02);
    head.cy = 0.5 + uniform(anatomy, -0.02, 0.02);
    head.ax = uniform(anatomy, 0.36, 0.42) * extent;
    head.ay = uniform(anatomy, 0.42, 0.46) * extent;
    head.theta = uniform(anatomy, -0.1, 0.1);
    head.value = 0.8;
    scene.primitives.push_back(head);

    Ellipse brain = head;
    brain.ax *= 0.88;
    brain.ay *= 0.9;
    brain.value = 0.5;
    scene.primitives.push_back(brain);

    const double ventricle_gap = uniform(anatomy, 0.05, 0.08);
    if (std::abs(z) < 0.6) {
        for (int side : {-1, 1}) {
            Ellipse v{};
            place_inside(brain, 0.0, 0.0, v.cx, v.cy);
            v.cx += side * ventricle_gap * extent;
            v.ax = uniform(detail, 0.025, 0.045);
            v.ay = uniform(detail, 0.06, 0.11) * (1.0 - std::abs(z));
            v.ay = std::max(v.ay, 0.02);
            v.theta = head.theta + side * uniform(detail, 0.0, 0.3);
            v.value = uniform(detail, 0.05, 0.1);
            scene.primitives.push_back(v);
        }
    }

    const int structures = 3 + static_cast<int>(detail() % 4);
    for (int i = 0; i < structures; ++i) {
        scene.primitives.push_back(
            random_blob(detail, brain, 0.65, 0.03, 0.1, uniform(detail, 0.2, 0.95), PrimitiveKind::kTissue));
    }
    if (uniform01(detail) < 0.5) {
        scene.primitives.push_back(random_blob(detail, brain, 0.6, 0.025, 0.05, 0.98, PrimitiveKind::kSharedLesion));
    }
    const int exclusive = 1 + static_cast<int>(detail() % 2);
    for (int i = 0; i < exclusive; ++i) {
        scene.primitives.push_back(
            random_blob(detail, brain, 0.6, 0.035, 0.07, 0.0, PrimitiveKind::kExclusiveLesion));
    }
    return scene;
}

DomainSet render_scene(const PhantomScene& scene, int height, int width, const ContrastTransform& contrast,
                       bool include_exclusive) {
    if (scene.primitives.empty()) throw std::invalid_argument("render_scene: scene has no head support");
    if (height < 1 || width < 1) throw std::invalid_argument("render_scene: degenerate image size");
    const auto n = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    std::vector<std::vector<double>> planes(kPhantomDomains, std::vector<double>(n, 0.0));
    std::vector<double> mask(n, 0.0);
    const Ellipse& head = scene.primitives.front();
    for (int y = 0; y < height; ++y) {
        const double py = (y + 0.5) / height;
        for (int x = 0; x < width; ++x) {
            const double px = (x + 0.5) / width;
            if (!head.contains(px, py)) continue;
            double tissue = 0.0;
            bool lesion = false;
            for (const auto& e : scene.primitives) {
                if (!e.contains(px, py)) continue;
                if (e.kind == PrimitiveKind::kExclusiveLesion) {
                    lesion = lesion || include_exclusive;
                } else {
                    tissue = e.value;
                }
            }
            const auto idx = static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
            for (int d = 0; d < kPhantomDomains; ++d) {
                planes[static_cast<std::size_t>(d)][idx] = contrast.apply(d, tissue, lesion);
            }
            mask[idx] = lesion ? 1.0 : 0.0;
        }
    }
    DomainSet set;
    set.subject = scene.subject;
    set.slice = scene.slice;
    for (auto& p : planes) set.images.push_back(Tensor::from_data({1, height, width}, std::move(p)));
    set.lesion_mask = Tensor::from_data({1, height, width}, std::move(mask));
    return set;
}

std::vector<Split> split_subjects(int n_subjects, std::uint64_t seed) {
    if (n_subjects < 3) throw std::invalid_argument("split: need at least 3 subjects, got " + std::to_string(n_subjects));
    const int held = std::max(1, static_cast<int>(std::lround(n_subjects / 10.0)));
    std::vector<int> order(static_cast<std::size_t>(n_subjects));
    for (int i = 0; i < n_subjects; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng = derived_rng(seed, {0x5b1170ULL});
    for (int i = n_subjects - 1; i > 0; --i) {
        const auto j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    std::vector<Split> out(static_cast<std::size_t>(n_subjects), Split::kTrain);
    for (int i = 0; i < held; ++i) {
        out[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = Split::kVal;
        out[static_cast<std::size_t>(order[static_cast<std::size_t>(held + i)])] = Split::kTest;
    }
    return out;
}

Dataset generate_dataset(int n_subjects, int slices_per_subject, int height, int width, std::uint64_t seed) {
    validate_dims(height, width);
    if (slices_per_subject < 1) throw std::invalid_argument("phantom: slices per subject must be >= 1");
    Dataset ds;
    ds.height = height;
    ds.width = width;
    ds.slices_per_subject = slices_per_subject;
    ds.seed = seed;
    ds.subject_split = split_subjects(n_subjects, seed);
    for (int s = 0; s < n_subjects; ++s) {
        for (int j = 0; j < slices_per_subject; ++j) {
            ds.sets.push_back(render_scene(make_scene(s, j, slices_per_subject, seed), height, width));
        }
    }
    return ds;
}

Tensor normalize(const Tensor& image) {
    auto d = image.data();
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (double v : d) {
        if (v == 0.0) continue;
        sum += v;
        ++n;
    }
    if (n == 0) throw NumericError("normalize: image has no nonzero pixels");
    const double mean = sum / static_cast<double>(n);
    for (double v : d) {
        if (v != 0.0) sq += (v - mean) * (v - mean);
    }
    const double sd = std::sqrt(sq / static_cast<double>(n));
    if (!(sd > 0.0) || !std::isfinite(sd)) throw NumericError("normalize: nonzero pixels have no spread");
    if (std::abs(sd - 1.0) <= 1e-12) return copy_image(image);
    std::vector<double> out(d.begin(), d.end());
    for (double& v : out) v /= sd;
    return Tensor::from_data(image.shape(), std::move(out));
}

DomainSet preprocess(const DomainSet& set) {
    DomainSet out;
    out.subject = set.subject;
    out.slice = set.slice;
    for (const auto& img : set.images) out.images.push_back(normalize(img));
    out.lesion_mask = copy_image(set.lesion_mask);
    return out;
}

AugmentParams draw_augment(Rng& rng) {
    AugmentParams p;
    p.scale = 0.9 + 0.2 * uniform01(rng);
    p.flip = uniform01(rng) < 0.5;
    return p;
}

DomainSet apply_augment(const DomainSet& set, const AugmentParams& params) {
    if (!(params.scale > 0.0)) throw std::invalid_argument("augment: scale must be > 0");
    DomainSet out;
    out.subject = set.subject;
    out.slice = set.slice;
    for (const auto& img : set.images) out.images.push_back(transform_plane(img, params, false));
    out.lesion_mask = transform_plane(set.lesion_mask, params, true);
    return out;
}

DomainSet augment(const DomainSet& set, Rng& rng) { return apply_augment(set, draw_augment(rng)); }

Tensor stack_domain(const std::vector<const DomainSet*>& sets, int domain) {
    if (sets.empty()) throw std::invalid_argument("stack_domain: empty batch");
    const Shape& s = sets.front()->images.at(static_cast<std::size_t>(domain)).shape();
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(shape_numel(s)) * sets.size());
    for (const auto* set : sets) {
        const Tensor& img = set->images.at(static_cast<std::size_t>(domain));
        if (img.shape() != s) throw ShapeError("stack_domain: images differ in shape");
        data.insert(data.end(), img.data().begin(), img.data().end());
    }
    return Tensor::from_data({static_cast<std::int64_t>(sets.size()), 1, s[1], s[2]}, std::move(data));
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::map<int, std::vector<NamedTensor>> per_subject;
    for (const auto& set : ds.sets) {
        auto& list = per_subject[set.subject];
        const std::string prefix = "slice" + std::to_string(set.slice) + ".";
        for (int d = 0; d < kPhantomDomains; ++d) {
            list.push_back({prefix + kDomainNames[static_cast<std::size_t>(d)], set.images.at(static_cast<std::size_t>(d))});
        }
        list.push_back({prefix + "lesion", set.lesion_mask});
    }
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
    manifest << "collagan-dataset " << kDatasetVersion << "\n";
    manifest << "seed " << ds.seed << "\n";
    manifest << "height " << ds.height << "\n";
    manifest << "width " << ds.width << "\n";
    manifest << "domains";
    for (const auto& n : kDomainNames) manifest << ' ' << n;
    manifest << "\n";
    manifest << "subjects " << ds.num_subjects() << "\n";
    for (int s = 0; s < ds.num_subjects(); ++s) {
        const auto file = subject_file(s);
        manifest << "subject " << s << " slices " << ds.slices_per_subject << " split "
                 << split_name(ds.subject_split[static_cast<std::size_t>(s)]) << " file " << file << "\n";
        save_snapshot(dir / file, per_subject[s]);
    }
    if (!manifest) throw std::runtime_error("failed writing dataset manifest");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.txt");
    if (!in) throw FormatError("dataset: missing manifest in " + dir.string());
    auto expect = [&](const std::string& key) {
        std::string k;
        if (!(in >> k) || k != key) throw FormatError("dataset manifest: expected '" + key + "'");
    };
    std::string magic;
    int version = 0;
    if (!(in >> magic) || magic != "collagan-dataset") throw FormatError("dataset manifest: bad header");
    if (!(in >> version)) throw FormatError("dataset manifest: missing version");
    if (version != kDatasetVersion) {
        throw FormatError("dataset manifest: version " + std::to_string(version) + " not supported (expected " +
                          std::to_string(kDatasetVersion) + ")");
    }
    Dataset ds;
    int n_subjects = 0;
    expect("seed");
    in >> ds.seed;
    expect("height");
    in >> ds.height;
    expect("width");
    in >> ds.width;
    expect("domains");
    for (const auto& name : kDomainNames) {
        std::string got;
        in >> got;
        if (got != name) throw FormatError("dataset manifest: domain '" + got + "' where '" + name + "' expected");
    }
    expect("subjects");
    in >> n_subjects;
    if (!in || n_subjects < 1) throw FormatError("dataset manifest: bad subject count");
    for (int s = 0; s < n_subjects; ++s) {
        int id = -1, slices = 0;
        std::string split, file;
        expect("subject");
        in >> id;
        expect("slices");
        in >> slices;
        expect("split");
        in >> split;
        expect("file");
        in >> file;
        if (!in || id != s || slices < 1) throw FormatError("dataset manifest: bad entry for subject " + std::to_string(s));
        if (s == 0) ds.slices_per_subject = slices;
        if (slices != ds.slices_per_subject) throw FormatError("dataset manifest: ragged slice counts");
        ds.subject_split.push_back(parse_split(split));

        auto tensors = load_snapshot(dir / file);
        std::map<std::string, Tensor> by_name;
        for (auto& t : tensors) by_name[t.name] = t.tensor;
        const Shape shape{1, ds.height, ds.width};
        auto fetch = [&](const std::string& name) {
            auto it = by_name.find(name);
            if (it == by_name.end()) throw FormatError("dataset: " + file + " lacks " + name);
            if (it->second.shape() != shape) throw FormatError("dataset: " + name + " has wrong shape");
            return it->second;
        };
        for (int j = 0; j < slices; ++j) {
            DomainSet set;
            set.subject = s;
            set.slice = j;
            const std::string prefix = "slice" + std::to_string(j) + ".";
            for (const auto& name : kDomainNames) set.images.push_back(fetch(prefix + name));
            set.lesion_mask = fetch(prefix + "lesion");
            ds.sets.push_back(std::move(set));
        }
    }
    return ds;
}

}  // namespace collagan
