#include "fcad/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "json.hpp"

namespace fs = std::filesystem;

namespace fcad {

DatasetLayout parse_layout(const std::string& name) {
    std::string s;
    for (char c : name) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (s == "mvtec") return DatasetLayout::kMvtec;
    if (s == "visa") return DatasetLayout::kVisa;
    if (s == "folder_binary" || s == "folder-binary") return DatasetLayout::kFolderBinary;
    if (s == "synthetic") return DatasetLayout::kSynthetic;
    throw ConfigError("unknown dataset layout: '" + name +
                      "' (expected mvtec, visa, folder_binary, or synthetic)");
}

const char* layout_name(DatasetLayout layout) {
    switch (layout) {
        case DatasetLayout::kMvtec: return "mvtec";
        case DatasetLayout::kVisa: return "visa";
        case DatasetLayout::kFolderBinary: return "folder_binary";
        case DatasetLayout::kSynthetic: return "synthetic";
    }
    return "?";
}

namespace {

constexpr const char* kImageExts[] = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (const char* e : kImageExts)
        if (ext == e) return true;
    return false;
}

std::vector<fs::path> list_images(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<fs::path> list_subdirs(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

Tensor read_image_rgb(const fs::path& p) {
    cv::Mat m = cv::imread(p.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw DataError("failed to decode image: " + p.string());
    Tensor t({3, m.rows, m.cols});
    const size_t plane = static_cast<size_t>(m.rows) * m.cols;
    for (int y = 0; y < m.rows; ++y) {
        const auto* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < m.cols; ++x) {
            const size_t i = static_cast<size_t>(y) * m.cols + x;
            t.v[i] = row[x][2] / 255.0f;              // R
            t.v[plane + i] = row[x][1] / 255.0f;      // G
            t.v[2 * plane + i] = row[x][0] / 255.0f;  // B
        }
    }
    return t;
}

Tensor read_mask_binary(const fs::path& p) {
    cv::Mat m = cv::imread(p.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw DataError("failed to decode mask: " + p.string());
    Tensor t({m.rows, m.cols});
    for (int y = 0; y < m.rows; ++y) {
        const auto* row = m.ptr<uint8_t>(y);
        for (int x = 0; x < m.cols; ++x)
            t.v[static_cast<size_t>(y) * m.cols + x] = row[x] > 127 ? 1.0f : 0.0f;
    }
    return t;
}

void write_png_rgb(const fs::path& p, const Tensor& img) {
    const int h = img.dim(1), w = img.dim(2);
    const size_t plane = static_cast<size_t>(h) * w;
    cv::Mat m(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y) {
        auto* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x) {
            const size_t i = static_cast<size_t>(y) * w + x;
            auto q = [&](float v) {
                return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            };
            row[x] = {q(img.v[2 * plane + i]), q(img.v[plane + i]), q(img.v[i])};  // BGR
        }
    }
    if (!cv::imwrite(p.string(), m)) throw IoError("failed to write image: " + p.string());
}

void write_png_mask(const fs::path& p, const Tensor& mask) {
    const int h = mask.dim(0), w = mask.dim(1);
    cv::Mat m(h, w, CV_8UC1);
    for (int y = 0; y < h; ++y) {
        auto* row = m.ptr<uint8_t>(y);
        for (int x = 0; x < w; ++x)
            row[x] = mask.v[static_cast<size_t>(y) * w + x] > 0.5f ? 255 : 0;
    }
    if (!cv::imwrite(p.string(), m)) throw IoError("failed to write mask: " + p.string());
}

bool mask_nonempty(const Tensor& m) {
    return std::any_of(m.v.begin(), m.v.end(), [](float v) { return v > 0.5f; });
}

/// Mask file for `<stem>.<ext>`: `<stem>_mask.*`, exact name preferred.
fs::path find_mask_file(const fs::path& gt_dir, const std::string& stem) {
    const std::string want = stem + "_mask";
    fs::path fallback;
    for (const auto& p : list_images(gt_dir)) {
        const std::string s = p.stem().string();
        if (s == want) return p;
        if (fallback.empty() && s.rfind(want, 0) == 0) fallback = p;
    }
    return fallback;
}

std::vector<Sample> load_mvtec_tree(const DatasetSpec& spec, const std::string& category,
                                    Split split) {
    const fs::path base = fs::path(spec.root) / category;
    if (split == Split::kTrain) {
        const fs::path good = base / "train" / "good";
        if (list_images(good).empty())
            throw DataError("load_dataset: empty or missing training split; expected images under " +
                            good.string());
        for (const auto& sub : list_subdirs(base / "train"))
            if (sub.filename() != "good" && !list_images(sub).empty())
                throw DataError(
                    "load_dataset: training split must contain only normal images, found " +
                    sub.string());
        std::vector<Sample> out;
        for (const auto& p : list_images(good))
            out.push_back({read_image_rgb(p), 0, std::nullopt, category, p.string()});
        return out;
    }

    const fs::path test = base / "test";
    if (!fs::is_directory(test))
        throw DataError("load_dataset: missing test split; expected subfolders under " +
                        test.string() + " such as " + (test / "good").string() + " and " +
                        (test / "<defect>").string());
    std::vector<Sample> out;
    for (const auto& sub : list_subdirs(test)) {
        const std::string kind = sub.filename().string();
        for (const auto& p : list_images(sub)) {
            Sample smp;
            smp.image = read_image_rgb(p);
            smp.category = category;
            smp.path = p.string();
            const int h = smp.image.dim(1), w = smp.image.dim(2);
            if (kind == "good") {
                smp.label = 0;
                smp.mask = Tensor({h, w});
            } else {
                smp.label = 1;
                const fs::path gt_dir = base / "ground_truth" / kind;
                const fs::path mp = find_mask_file(gt_dir, p.stem().string());
                if (mp.empty())
                    throw DataError("load_dataset: no ground-truth mask for " + p.string() +
                                    "; expected " +
                                    (gt_dir / (p.stem().string() + "_mask.png")).string());
                Tensor mask = read_mask_binary(mp);
                if (mask.dim(0) != h || mask.dim(1) != w)
                    throw DataError("load_dataset: mask shape mismatch for " + p.string() +
                                    " vs " + mp.string());
                if (!mask_nonempty(mask))
                    throw DataError("load_dataset: all-zero mask for anomalous image " +
                                    p.string());
                smp.mask = std::move(mask);
            }
            out.push_back(std::move(smp));
        }
    }
    if (out.empty())
        throw DataError("load_dataset: empty test split under " + test.string());
    return out;
}

std::vector<Sample> load_folder_binary(const DatasetSpec& spec, Split split) {
    const fs::path root(spec.root);
    const std::string category =
        spec.category.empty() ? root.filename().string() : spec.category;
    if (split == Split::kTrain) {
        const fs::path normal = root / "train" / "normal";
        if (list_images(normal).empty())
            throw DataError("load_dataset: empty or missing training split; expected images under " +
                            normal.string());
        if (!list_images(root / "train" / "anomalous").empty())
            throw DataError("load_dataset: training split must contain only normal images, found " +
                            (root / "train" / "anomalous").string());
        std::vector<Sample> out;
        for (const auto& p : list_images(normal))
            out.push_back({read_image_rgb(p), 0, std::nullopt, category, p.string()});
        return out;
    }

    const fs::path tn = root / "test" / "normal";
    const fs::path ta = root / "test" / "anomalous";
    auto normals = list_images(tn);
    auto anoms = list_images(ta);
    if (normals.empty() || anoms.empty())
        throw DataError("load_dataset: incomplete test split; expected images under both " +
                        tn.string() + " and " + ta.string());
    std::vector<Sample> out;
    for (const auto& p : anoms)
        out.push_back({read_image_rgb(p), 1, std::nullopt, category, p.string()});
    for (const auto& p : normals)
        out.push_back({read_image_rgb(p), 0, std::nullopt, category, p.string()});
    std::sort(out.begin(), out.end(),
              [](const Sample& a, const Sample& b) { return a.path < b.path; });
    return out;
}

std::vector<Sample> load_visa(const DatasetSpec& spec, Split split) {
    if (spec.category.empty())
        throw ConfigError("load_dataset: category is required for the visa layout");
    const fs::path root(spec.root);
    fs::path csv = spec.split_file.empty() ? root / "split_csv" / "1cls.csv"
                                           : fs::path(spec.split_file);
    if (csv.is_relative() && !spec.split_file.empty()) csv = root / csv;
    std::ifstream in(csv);
    if (!in)
        throw DataError("load_dataset: missing split file; expected " + csv.string());

    const std::string want_split = split == Split::kTrain ? "train" : "test";
    std::vector<Sample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<std::string> col;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) col.push_back(field);
        while (col.size() < 5) col.emplace_back();
        if (col[0] == "object") continue;  // header
        if (col[0] != spec.category || col[1] != want_split) continue;

        const int label = col[2] == "normal" ? 0 : 1;
        if (split == Split::kTrain && label != 0)
            throw DataError("load_dataset: training split must contain only normal images, row: " +
                            line);
        Sample smp;
        const fs::path img = root / col[3];
        smp.image = read_image_rgb(img);
        smp.label = label;
        smp.category = spec.category;
        smp.path = img.string();
        const int h = smp.image.dim(1), w = smp.image.dim(2);
        if (split == Split::kTest) {
            if (label == 1) {
                if (col[4].empty())
                    throw DataError("load_dataset: anomalous row without a mask column: " + line);
                Tensor mask = read_mask_binary(root / col[4]);
                if (mask.dim(0) != h || mask.dim(1) != w)
                    throw DataError("load_dataset: mask shape mismatch for " + img.string());
                if (!mask_nonempty(mask))
                    throw DataError("load_dataset: all-zero mask for anomalous image " +
                                    img.string());
                smp.mask = std::move(mask);
            } else {
                smp.mask = Tensor({h, w});
            }
        }
        out.push_back(std::move(smp));
    }
    if (out.empty())
        throw DataError("load_dataset: no rows for category '" + spec.category + "', split '" +
                        want_split + "' in " + csv.string());
    std::sort(out.begin(), out.end(),
              [](const Sample& a, const Sample& b) { return a.path < b.path; });
    return out;
}

}  // namespace

namespace {

// summary of the directory tree a layout expects, for not-found diagnostics
std::string layout_hint(DatasetLayout layout) {
    switch (layout) {
        case DatasetLayout::kMvtec:
        case DatasetLayout::kSynthetic:
            return "<root>/<category>/{train/good, test/<kind>, ground_truth/<kind>}";
        case DatasetLayout::kVisa:
            return "<root>/{split_csv/1cls.csv, <images and masks referenced by the csv>}";
        case DatasetLayout::kFolderBinary:
            return "<root>/{train/normal, test/normal, test/anomalous}";
    }
    return "<root>";
}

}  // namespace

std::vector<Sample> load_dataset(const DatasetSpec& spec, Split split) {
    if (spec.root.empty())
        throw ConfigError("load_dataset: dataset root is empty; expected layout " +
                          std::string(layout_name(spec.layout)) + ": " +
                          layout_hint(spec.layout));
    if (!fs::exists(spec.root))
        throw DataError("load_dataset: dataset root does not exist: " + spec.root +
                        "; expected layout " + std::string(layout_name(spec.layout)) + ": " +
                        layout_hint(spec.layout));
    switch (spec.layout) {
        case DatasetLayout::kMvtec:
            if (spec.category.empty())
                throw ConfigError("load_dataset: category is required for the mvtec layout");
            return load_mvtec_tree(spec, spec.category, split);
        case DatasetLayout::kSynthetic:
            return load_mvtec_tree(spec, spec.category.empty() ? "synthetic" : spec.category,
                                   split);
        case DatasetLayout::kVisa: return load_visa(spec, split);
        case DatasetLayout::kFolderBinary: return load_folder_binary(spec, split);
    }
    throw ConfigError("load_dataset: unhandled layout");
}

Sample load_image_file(const std::string& path) {
    if (!fs::exists(path)) throw DataError("image file does not exist: " + path);
    return {read_image_rgb(path), 0, std::nullopt, "", path};
}

Preprocessed preprocess(const Sample& sample, const DatasetSpec& spec) {
    check_shape(sample.image.rank() == 3 && sample.image.dim(0) == 3,
                "preprocess: image must be (3, H, W), got " + sample.image.shape_str());
    check_config(spec.image_size >= 2, "preprocess: image_size must be at least 2");
    const int size = spec.image_size;
    int out = size;
    int off = 0;
    if (spec.center_crop) {
        check_config(*spec.center_crop > 0 && *spec.center_crop <= size,
                     "preprocess: center_crop must be in (0, image_size]");
        out = *spec.center_crop;
        off = (size - out) / 2;
    }
    for (int c = 0; c < 3; ++c)
        check_config(spec.normalization.std[static_cast<size_t>(c)] > 0.0f,
                     "preprocess: normalization std must be positive");

    const int h = sample.image.dim(1), w = sample.image.dim(2);
    Tensor resized =
        (h == size && w == size) ? sample.image : upsample_bilinear(sample.image, size, size);

    Preprocessed pp;
    pp.image = Tensor({3, out, out});
    for (int c = 0; c < 3; ++c) {
        const float mean = spec.normalization.mean[static_cast<size_t>(c)];
        const float inv = 1.0f / spec.normalization.std[static_cast<size_t>(c)];
        for (int y = 0; y < out; ++y)
            for (int x = 0; x < out; ++x)
                pp.image.at3(c, y, x) = (resized.at3(c, y + off, x + off) - mean) * inv;
    }

    if (sample.mask) {
        const Tensor& m = *sample.mask;
        check_shape(m.rank() == 2 && m.dim(0) == h && m.dim(1) == w,
                    "preprocess: mask must match the image spatial shape");
        Tensor rm({out, out});
        const double sy = static_cast<double>(h) / size, sx = static_cast<double>(w) / size;
        for (int y = 0; y < out; ++y) {
            const int iy = std::clamp(
                static_cast<int>(std::floor((y + off + 0.5) * sy)), 0, h - 1);
            for (int x = 0; x < out; ++x) {
                const int ix = std::clamp(
                    static_cast<int>(std::floor((x + off + 0.5) * sx)), 0, w - 1);
                rm.v[static_cast<size_t>(y) * out + x] =
                    m.v[static_cast<size_t>(iy) * w + ix] >= 0.5f ? 1.0f : 0.0f;
            }
        }
        pp.mask = std::move(rm);
    }
    return pp;
}

PackedSplit load_packed(const DatasetSpec& spec, Split split) {
    auto samples = load_dataset(spec, split);
    const int out = spec.center_crop ? *spec.center_crop : spec.image_size;
    PackedSplit ps;
    ps.images = Tensor({static_cast<int>(samples.size()), 3, out, out});
    ps.has_masks = !samples.empty() && std::all_of(samples.begin(), samples.end(),
                                                   [](const Sample& s) { return bool(s.mask); });
    const size_t stride = static_cast<size_t>(3) * out * out;
    for (size_t i = 0; i < samples.size(); ++i) {
        auto pp = preprocess(samples[i], spec);
        std::memcpy(ps.images.v.data() + i * stride, pp.image.v.data(),
                    stride * sizeof(float));
        ps.labels.push_back(samples[i].label);
        ps.categories.push_back(samples[i].category);
        ps.paths.push_back(samples[i].path);
        if (ps.has_masks) ps.masks.push_back(std::move(*pp.mask));
    }
    return ps;
}

// ---------------------------------------------------------------------------
// Synthetic defect generator
// ---------------------------------------------------------------------------

namespace {

constexpr double kPi = 3.14159265358979323846;

/// Dataset-wide texture description shared by every generated image.
struct TextureParams {
    double f0, f1;                 // cycles per image for two harmonics
    double th0, th1;               // harmonic orientations
    std::array<double, 3> base;    // per-channel base level
    std::array<double, 3> pw;      // per-channel pattern weight
    double pattern_amp;
    double noise_amp;
};

TextureParams draw_texture_params(Rng& rng) {
    TextureParams tp;
    tp.f0 = rng.uniform(4.0, 6.0);
    tp.f1 = tp.f0 * rng.uniform(1.7, 2.3);
    tp.th0 = rng.uniform(0.0, kPi);
    tp.th1 = tp.th0 + rng.uniform(0.6, 1.2);
    for (auto& b : tp.base) b = rng.uniform(0.42, 0.58);
    for (auto& w : tp.pw) w = rng.uniform(0.8, 1.2);
    tp.pattern_amp = 0.14;
    tp.noise_amp = 0.07;
    return tp;
}

Tensor render_normal(const TextureParams& tp, Rng& rng, int s) {
    const double f0 = tp.f0 * rng.uniform(0.98, 1.02);
    const double f1 = tp.f1 * rng.uniform(0.98, 1.02);
    const double th0 = tp.th0 + rng.uniform(-0.03, 0.03);
    const double th1 = tp.th1 + rng.uniform(-0.03, 0.03);
    const double ph0 = rng.uniform(0.0, 2.0 * kPi);
    const double ph1 = rng.uniform(0.0, 2.0 * kPi);

    // band-limited noise: a coarse gaussian grid interpolated up to full size
    const int g = std::max(2, s / 8);
    Tensor shared({1, g, g}), chan({3, g, g});
    rng.fill_normal(shared);
    rng.fill_normal(chan);
    const Tensor shared_up = upsample_bilinear(shared, s, s);
    const Tensor chan_up = upsample_bilinear(chan, s, s);

    Tensor img({3, s, s});
    const double c0 = std::cos(th0), s0 = std::sin(th0);
    const double c1 = std::cos(th1), s1 = std::sin(th1);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const double u = (x * c0 + y * s0) / s;
            const double v = (x * c1 + y * s1) / s;
            const double pat =
                std::sin(2.0 * kPi * f0 * u + ph0) + 0.45 * std::sin(2.0 * kPi * f1 * v + ph1);
            const double n_shared = shared_up.at3(0, y, x);
            for (int c = 0; c < 3; ++c) {
                const auto ci = static_cast<size_t>(c);
                const double val = tp.base[ci] + tp.pattern_amp * tp.pw[ci] * pat +
                                   tp.noise_amp * (0.7 * n_shared + 0.5 * chan_up.at3(c, y, x));
                img.at3(c, y, x) = static_cast<float>(std::clamp(val, 0.02, 0.98));
            }
        }
    return img;
}

double area_fraction(const Tensor& mask) {
    double n = 0.0;
    for (float v : mask.v) n += v > 0.5f ? 1.0 : 0.0;
    return n / static_cast<double>(mask.numel());
}

/// Elliptic region with a per-channel additive contrast shift.
void paint_blob(Tensor& img, Tensor& mask, Rng& rng, int s) {
    const double target = rng.uniform(0.012, 0.045) * s * s;
    const double r0 = std::sqrt(target / kPi);
    const double aspect = rng.uniform(0.6, 1.0);
    const double rx = r0 / std::sqrt(aspect), ry = r0 * std::sqrt(aspect);
    const double rot = rng.uniform(0.0, kPi);
    const double margin = std::max(rx, ry) + 1.0;
    const double cx = rng.uniform(margin, s - 1 - margin);
    const double cy = rng.uniform(margin, s - 1 - margin);
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    std::array<double, 3> delta;
    for (auto& d : delta) d = sign * rng.uniform(0.28, 0.5);

    const double cr = std::cos(rot), sr = std::sin(rot);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double u = (dx * cr + dy * sr) / rx;
            const double v = (-dx * sr + dy * cr) / ry;
            const double d = std::sqrt(u * u + v * v);
            if (d > 1.0) continue;
            mask.v[static_cast<size_t>(y) * s + x] = 1.0f;
            const double soft = std::min(1.0, (1.0 - d) / 0.25);
            for (int c = 0; c < 3; ++c)
                img.at3(c, y, x) = static_cast<float>(std::clamp(
                    img.at3(c, y, x) + delta[static_cast<size_t>(c)] * soft, 0.0, 1.0));
        }
}

/// Thin bright or dark line segment.
void paint_scratch(Tensor& img, Tensor& mask, Rng& rng, int s) {
    const double target = rng.uniform(0.012, 0.045) * s * s;
    const double half_w = rng.uniform() < 0.5 ? 0.9 : 1.4;
    const double len = std::clamp(target / (2.0 * half_w + 0.6), 8.0, 0.85 * s);
    double cx = 0, cy = 0, ang = 0;
    for (int attempt = 0; attempt < 64; ++attempt) {
        ang = rng.uniform(0.0, kPi);
        const double mx = std::abs(std::cos(ang)) * len / 2 + half_w + 1;
        const double my = std::abs(std::sin(ang)) * len / 2 + half_w + 1;
        if (2 * mx >= s - 2 || 2 * my >= s - 2) continue;
        cx = rng.uniform(mx, s - 1 - mx);
        cy = rng.uniform(my, s - 1 - my);
        break;
    }
    const double dxu = std::cos(ang), dyu = std::sin(ang);
    const double x0 = cx - dxu * len / 2, y0 = cy - dyu * len / 2;
    const double x1 = cx + dxu * len / 2, y1 = cy + dyu * len / 2;
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double delta = sign * rng.uniform(0.3, 0.5);

    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            // distance from the segment
            const double px = x - x0, py = y - y0;
            const double ex = x1 - x0, ey = y1 - y0;
            const double t = std::clamp((px * ex + py * ey) / (ex * ex + ey * ey), 0.0, 1.0);
            const double qx = px - t * ex, qy = py - t * ey;
            const double d = std::sqrt(qx * qx + qy * qy);
            if (d > half_w) continue;
            mask.v[static_cast<size_t>(y) * s + x] = 1.0f;
            for (int c = 0; c < 3; ++c)
                img.at3(c, y, x) =
                    static_cast<float>(std::clamp(img.at3(c, y, x) + delta, 0.0, 1.0));
        }
}

/// Copy a square patch to a disjoint location, rotated a quarter turn so its
/// texture orientation disagrees with the surroundings.
void paint_patch_swap(Tensor& img, Tensor& mask, Rng& rng, int s) {
    const double target = rng.uniform(0.012, 0.045) * s * s;
    const int side = std::clamp(static_cast<int>(std::lround(std::sqrt(target))), 4, s / 3);
    int sx = 0, sy = 0, dx = 0, dy = 0;
    for (int attempt = 0; attempt < 128; ++attempt) {
        sx = rng.uniform_int(1, s - side - 2);
        sy = rng.uniform_int(1, s - side - 2);
        dx = rng.uniform_int(1, s - side - 2);
        dy = rng.uniform_int(1, s - side - 2);
        if (std::abs(sx - dx) > side || std::abs(sy - dy) > side) break;
    }
    Tensor patch({3, side, side});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) patch.at3(c, y, x) = img.at3(c, sy + y, sx + x);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) {
                img.at3(c, dy + y, dx + x) = patch.at3(c, x, side - 1 - y);  // quarter turn
            }
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            mask.v[static_cast<size_t>(dy + y) * s + (dx + x)] = 1.0f;
}

/// One anomalous image: a normal render plus one localized defect whose area
/// fraction lands inside [kDefectAreaLo, kDefectAreaHi].
std::pair<Tensor, Tensor> render_anomalous(const TextureParams& tp, Rng& rng, int s, int kind) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        Tensor img = render_normal(tp, rng, s);
        Tensor mask({s, s});
        switch (kind % 3) {
            case 0: paint_blob(img, mask, rng, s); break;
            case 1: paint_scratch(img, mask, rng, s); break;
            default: paint_patch_swap(img, mask, rng, s); break;
        }
        const double frac = area_fraction(mask);
        if (frac >= kDefectAreaLo && frac <= kDefectAreaHi) return {std::move(img), std::move(mask)};
    }
    throw DataError("make_synthetic_dataset: could not place a defect within the area bounds");
}

std::string index_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d.png", i);
    return buf;
}

}  // namespace

DatasetSpec make_synthetic_dataset(uint64_t seed, int n_train, int n_test_normal,
                                   int n_test_anom, int image_size, const std::string& root) {
    check_config(n_train >= 1 && n_test_normal >= 1 && n_test_anom >= 1,
                 "make_synthetic_dataset: all sample counts must be at least 1");
    check_config(image_size >= 16, "make_synthetic_dataset: image_size must be at least 16");

    const fs::path base = fs::path(root) / "synthetic";
    const fs::path train_dir = base / "train" / "good";
    const fs::path test_good = base / "test" / "good";
    const fs::path test_defect = base / "test" / "defect";
    const fs::path gt_dir = base / "ground_truth" / "defect";
    for (const auto& d : {train_dir, test_good, test_defect, gt_dir})
        fs::create_directories(d);

    Rng rng(seed);
    const TextureParams tp = draw_texture_params(rng);

    for (int i = 0; i < n_train; ++i) {
        Rng ri = rng.fork(0x1000000ULL + static_cast<uint64_t>(i));
        write_png_rgb(train_dir / index_name(i), render_normal(tp, ri, image_size));
    }
    for (int i = 0; i < n_test_normal; ++i) {
        Rng ri = rng.fork(0x2000000ULL + static_cast<uint64_t>(i));
        write_png_rgb(test_good / index_name(i), render_normal(tp, ri, image_size));
    }
    for (int i = 0; i < n_test_anom; ++i) {
        Rng ri = rng.fork(0x3000000ULL + static_cast<uint64_t>(i));
        auto [img, mask] = render_anomalous(tp, ri, image_size, i);
        write_png_rgb(test_defect / index_name(i), img);
        const std::string stem = index_name(i).substr(0, 4);
        write_png_mask(gt_dir / (stem + "_mask.png"), mask);
    }

    nlohmann::json manifest = {
        {"category", "synthetic"},
        {"seed", seed},
        {"image_size", image_size},
        {"n_train", n_train},
        {"n_test_normal", n_test_normal},
        {"n_test_anom", n_test_anom},
        {"defect_area_fraction", {kDefectAreaLo, kDefectAreaHi}},
        {"defect_kinds", {"blob", "scratch", "patch"}},
    };
    std::ofstream mf(fs::path(root) / "manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw IoError("make_synthetic_dataset: failed to write manifest under " + root);

    DatasetSpec spec;
    spec.layout = DatasetLayout::kSynthetic;
    spec.root = root;
    spec.category = "synthetic";
    spec.image_size = image_size;
    spec.normalization = {{0.5f, 0.5f, 0.5f}, {0.25f, 0.25f, 0.25f}};
    return spec;
}

}  // namespace fcad
