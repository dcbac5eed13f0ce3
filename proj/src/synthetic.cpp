#include "gatefusion/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "gatefusion/image_io.hpp"
#include "gatefusion/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gatefusion {

namespace {

constexpr int kManifestVersion = 1;

float fract(float v) { return v - std::floor(v); }

constexpr float kPaletteSaturation = 0.75f;
constexpr float kPaletteValue = 0.85f;

float quantize255(float v) {
    v = std::min(1.0f, std::max(0.0f, v));
    return static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
}

}  // namespace

std::array<float, 3> hue_to_rgb(float hue) {
    std::array<float, 3> rgb{};
    const float n[3] = {5.0f, 3.0f, 1.0f};
    for (int c = 0; c < 3; ++c) {
        const float k = std::fmod(n[c] + fract(hue) * 6.0f, 6.0f);
        const float chroma = std::max(0.0f, std::min({k, 4.0f - k, 1.0f}));
        rgb[c] = kPaletteValue * (1.0f - kPaletteSaturation * chroma);
    }
    return rgb;
}

json domain_spec_to_json(const DomainSpec& s) {
    return json{{"domain_id", s.domain_id},
                {"background_hue", s.background_hue},
                {"texture_amplitude", s.texture_amplitude},
                {"object_count_range", {s.object_count_min, s.object_count_max}},
                {"object_scale_range", {s.object_scale_min, s.object_scale_max}},
                {"object_aspect_range", {s.object_aspect_min, s.object_aspect_max}},
                {"noise_sigma", s.noise_sigma},
                {"occluder_density", s.occluder_density},
                {"class_set", s.class_set}};
}

DomainSpec domain_spec_from_json(const json& j) {
    DomainSpec s;
    s.domain_id = j.at("domain_id").get<std::string>();
    s.background_hue = j.at("background_hue").get<float>();
    s.texture_amplitude = j.at("texture_amplitude").get<float>();
    s.object_count_min = j.at("object_count_range").at(0).get<int>();
    s.object_count_max = j.at("object_count_range").at(1).get<int>();
    s.object_scale_min = j.at("object_scale_range").at(0).get<float>();
    s.object_scale_max = j.at("object_scale_range").at(1).get<float>();
    s.object_aspect_min = j.at("object_aspect_range").at(0).get<float>();
    s.object_aspect_max = j.at("object_aspect_range").at(1).get<float>();
    s.noise_sigma = j.at("noise_sigma").get<float>();
    s.occluder_density = j.at("occluder_density").get<float>();
    s.class_set = j.at("class_set").get<std::vector<int>>();
    s.validate();
    return s;
}

void DomainSpec::validate() const {
    if (domain_id.empty()) throw ConfigError("domain spec: empty domain_id");
    if (background_hue < 0.0f || background_hue > 1.0f)
        throw ConfigError("domain spec '" + domain_id + "': background_hue outside [0,1]");
    if (texture_amplitude < 0.0f || texture_amplitude > 0.5f)
        throw ConfigError("domain spec '" + domain_id + "': bad texture_amplitude");
    if (occluder_density < 0.0f || occluder_density > 1.0f)
        throw ConfigError("domain spec '" + domain_id + "': bad occluder_density");
    if (object_count_min < 0 || object_count_max < object_count_min)
        throw ConfigError("domain spec '" + domain_id + "': bad object_count_range");
    if (object_scale_min <= 0.0f || object_scale_max < object_scale_min)
        throw ConfigError("domain spec '" + domain_id + "': bad object_scale_range");
    if (object_aspect_min <= 0.0f || object_aspect_max < object_aspect_min)
        throw ConfigError("domain spec '" + domain_id + "': bad object_aspect_range");
    if (noise_sigma < 0.0f)
        throw ConfigError("domain spec '" + domain_id + "': negative noise_sigma");
    if (class_set.empty())
        throw ConfigError("domain spec '" + domain_id + "': empty class_set");
}

SceneSample generate_scene(const DomainSpec& spec, uint64_t seed, int index,
                           int image_h, int image_w) {
    spec.validate();
    Rng rng(substream_seed(seed, "sample", static_cast<uint64_t>(index)));

    SceneSample sample;
    sample.sample_id = spec.domain_id + "/" + std::to_string(index);
    const std::array<float, 3> bg_rgb = hue_to_rgb(spec.background_hue);
    Tensor img({3, image_h, image_w});
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < image_h * image_w; ++i)
            img[static_cast<size_t>(c) * image_h * image_w + i] = bg_rgb[c];

    // Low-frequency sinusoid texture, per-channel phase.
    if (spec.texture_amplitude > 0.0f) {
        const double fx = rng.uniform(0.02, 0.08);
        const double fy = rng.uniform(0.02, 0.08);
        double phase[3];
        for (double& p : phase) p = rng.uniform(0.0, 2.0 * M_PI);
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < image_h; ++y) {
                for (int x = 0; x < image_w; ++x) {
                    img[(static_cast<size_t>(c) * image_h + y) * image_w + x] +=
                        spec.texture_amplitude *
                        static_cast<float>(std::sin(2.0 * M_PI * (fx * x + fy * y) + phase[c]));
                }
            }
        }
    }

    // Objects: filled axis-aligned rectangles or ellipses in the complement
    // hue of the background; ground truth is the tight pixel box.
    const std::array<float, 3> object_rgb = hue_to_rgb(spec.background_hue + 0.5f);
    const int count =
        static_cast<int>(rng.uniform_int(spec.object_count_min, spec.object_count_max));
    for (int obj = 0; obj < count; ++obj) {
        const float scale = static_cast<float>(
            rng.uniform(spec.object_scale_min, spec.object_scale_max));
        const float aspect = static_cast<float>(
            rng.uniform(spec.object_aspect_min, spec.object_aspect_max));
        int w = std::max(2, static_cast<int>(std::lround(scale / std::sqrt(aspect))));
        int h = std::max(2, static_cast<int>(std::lround(scale * std::sqrt(aspect))));
        w = std::min(w, image_w - 2);
        h = std::min(h, image_h - 2);
        const bool ellipse = rng.uniform() < 0.5;
        const float jitter = static_cast<float>(rng.uniform(-0.05, 0.05));
        std::array<float, 3> shade{};
        for (int c = 0; c < 3; ++c)
            shade[c] = std::min(1.0f, std::max(0.0f, object_rgb[c] + jitter));

        // Prefer mostly-disjoint placements; after bounded retries accept the
        // last candidate so the object count stays within the spec's range.
        int x0 = 0, y0 = 0;
        for (int attempt = 0; attempt < 30; ++attempt) {
            x0 = static_cast<int>(rng.uniform_int(1, image_w - w - 1));
            y0 = static_cast<int>(rng.uniform_int(1, image_h - h - 1));
            Box cand{static_cast<float>(x0), static_cast<float>(y0),
                     static_cast<float>(x0 + w), static_cast<float>(y0 + h)};
            bool clear = true;
            for (const auto& gt : sample.ground_truth) {
                if (iou(cand, gt.box) > 0.25f) {
                    clear = false;
                    break;
                }
            }
            if (clear) break;
        }

        const float cx = x0 + 0.5f * w;
        const float cy = y0 + 0.5f * h;
        for (int y = y0; y < y0 + h; ++y) {
            for (int x = x0; x < x0 + w; ++x) {
                if (ellipse) {
                    const float dx = (x + 0.5f - cx) / (0.5f * w);
                    const float dy = (y + 0.5f - cy) / (0.5f * h);
                    if (dx * dx + dy * dy > 1.0f) continue;
                }
                for (int c = 0; c < 3; ++c)
                    img[(static_cast<size_t>(c) * image_h + y) * image_w + x] = shade[c];
            }
        }

        const size_t ci = rng.uniform_int(0, static_cast<int64_t>(spec.class_set.size()) - 1);
        sample.ground_truth.push_back(
            {{static_cast<float>(x0), static_cast<float>(y0), static_cast<float>(x0 + w),
              static_cast<float>(y0 + h)},
             spec.class_set[ci]});
    }

    // Unlabeled occluder bars.
    if (spec.occluder_density > 0.0f) {
        const int n_occ =
            static_cast<int>(rng.uniform_int(0, std::lround(spec.occluder_density * 4.0)));
        for (int o = 0; o < n_occ; ++o) {
            const bool vertical = rng.uniform() < 0.5;
            const int thickness = static_cast<int>(rng.uniform_int(2, 4));
            const int pos = static_cast<int>(
                rng.uniform_int(0, (vertical ? image_w : image_h) - thickness - 1));
            const float shade = static_cast<float>(rng.uniform(0.0, 1.0));
            for (int y = 0; y < image_h; ++y) {
                for (int x = 0; x < image_w; ++x) {
                    const int p = vertical ? x : y;
                    if (p < pos || p >= pos + thickness) continue;
                    for (int c = 0; c < 3; ++c)
                        img[(static_cast<size_t>(c) * image_h + y) * image_w + x] = shade;
                }
            }
        }
    }

    if (spec.noise_sigma > 0.0f) {
        for (size_t i = 0; i < img.size(); ++i)
            img[i] += spec.noise_sigma * static_cast<float>(rng.gaussian());
    }
    for (size_t i = 0; i < img.size(); ++i) img[i] = quantize255(img[i]);

    sample.image = std::move(img);
    return sample;
}

std::vector<SceneSample> generate_domain_dataset(const DomainSpec& spec, int n,
                                                 uint64_t seed, int image_h, int image_w) {
    if (n < 1) throw ConfigError("generate_domain_dataset: n must be >= 1");
    std::vector<SceneSample> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(generate_scene(spec, seed, i, image_h, image_w));
    return out;
}

void save_dataset(const std::vector<SceneSample>& samples, const DomainSpec& spec,
                  uint64_t seed, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");

    json manifest;
    manifest["format_version"] = kManifestVersion;
    manifest["domain_id"] = spec.domain_id;
    manifest["seed"] = seed;
    manifest["spec"] = domain_spec_to_json(spec);

    std::ofstream ann(fs::path(dir) / "annotations.jsonl");
    if (!ann) throw IoError("cannot write annotations in " + dir);
    json records = json::array();
    char name[32];
    for (size_t i = 0; i < samples.size(); ++i) {
        std::snprintf(name, sizeof(name), "images/%05zu.png", i);
        write_png_rgb((fs::path(dir) / name).string(), samples[i].image);

        json boxes = json::array();
        json classes = json::array();
        for (const auto& gt : samples[i].ground_truth) {
            boxes.push_back({gt.box.x_min, gt.box.y_min, gt.box.x_max, gt.box.y_max});
            classes.push_back(gt.class_id);
        }
        ann << json{{"image", name}, {"boxes", boxes}, {"classes", classes}}.dump() << "\n";
        records.push_back({{"image", name}, {"annotations", samples[i].ground_truth.size()}});
    }
    manifest["records"] = records;

    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw IoError("cannot write manifest in " + dir);
    mf << manifest.dump(2) << "\n";
}

DomainSpec load_dataset_spec(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw IoError("missing manifest: " + (fs::path(dir) / "manifest.json").string());
    json manifest = json::parse(mf);
    return domain_spec_from_json(manifest.at("spec"));
}

std::vector<SceneSample> load_dataset(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw IoError("missing manifest: " + (fs::path(dir) / "manifest.json").string());
    json manifest = json::parse(mf);
    if (manifest.at("format_version").get<int>() != kManifestVersion) {
        throw IoError("manifest format_version " +
                      manifest.at("format_version").dump() + " unsupported (expected " +
                      std::to_string(kManifestVersion) + ")");
    }
    const std::string domain_id = manifest.at("domain_id").get<std::string>();

    std::ifstream ann(fs::path(dir) / "annotations.jsonl");
    if (!ann) throw IoError("missing annotations: " + (fs::path(dir) / "annotations.jsonl").string());

    std::vector<SceneSample> samples;
    std::string line;
    size_t idx = 0;
    const auto& records = manifest.at("records");
    while (std::getline(ann, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line);
        SceneSample s;
        const std::string img_rel = rec.at("image").get<std::string>();
        const std::string img_path = (fs::path(dir) / img_rel).string();
        if (!fs::exists(img_path)) throw IoError("missing image file: " + img_path);
        s.image = read_png_rgb(img_path);
        const auto& boxes = rec.at("boxes");
        const auto& classes = rec.at("classes");
        for (size_t b = 0; b < boxes.size(); ++b) {
            s.ground_truth.push_back({{boxes[b][0].get<float>(), boxes[b][1].get<float>(),
                                       boxes[b][2].get<float>(), boxes[b][3].get<float>()},
                                      classes[b].get<int>()});
        }
        if (idx < records.size() &&
            records[idx].at("annotations").get<size_t>() != s.ground_truth.size()) {
            throw ConfigError("annotation count mismatch for " + img_rel + " in " + dir);
        }
        s.sample_id = domain_id + "/" + std::to_string(idx);
        samples.push_back(std::move(s));
        ++idx;
    }
    if (idx != records.size()) {
        throw ConfigError("manifest lists " + std::to_string(records.size()) +
                          " records but annotations contain " + std::to_string(idx) +
                          " in " + dir);
    }
    return samples;
}

namespace {

DomainSpec make_source_spec(const std::string& id, float hue, float scale_lo, float scale_hi) {
    DomainSpec s;
    s.domain_id = id;
    s.background_hue = hue;
    s.texture_amplitude = 0.04f;
    s.object_count_min = 1;
    s.object_count_max = 3;
    s.object_scale_min = scale_lo;
    s.object_scale_max = scale_hi;
    s.object_aspect_min = 0.8f;
    s.object_aspect_max = 1.25f;
    s.noise_sigma = 0.02f;
    s.occluder_density = 0.0f;
    s.class_set = {0};
    return s;
}

// T' = T with nuisance perturbations only: hue jitter plus a <= 20%
// scale-range shift. Class set and counts are untouched.
DomainSpec perturb_few_shot(const DomainSpec& target, Rng& rng) {
    DomainSpec s = target;
    s.domain_id = target.domain_id + "p";
    s.background_hue =
        std::min(1.0f, std::max(0.0f, s.background_hue +
                                          static_cast<float>(rng.uniform(0.015, 0.035))));
    const float shift = 1.0f + static_cast<float>(rng.uniform(0.05, 0.12));
    s.object_scale_min *= shift;
    s.object_scale_max *= shift;
    return s;
}

}  // namespace

ExperimentPreset make_experiment_domains(const std::string& preset_name, uint64_t seed) {
    Rng rng(substream_seed(seed, "preset:" + preset_name));
    ExperimentPreset p;
    p.name = preset_name;

    if (preset_name == "small5") {
        const float hues[5] = {0.10f, 0.30f, 0.50f, 0.70f, 0.90f};
        const float lo[5] = {9.0f, 11.0f, 14.0f, 10.0f, 16.0f};
        const float hi[5] = {14.0f, 17.0f, 22.0f, 16.0f, 26.0f};
        for (int i = 0; i < 5; ++i)
            p.sources.push_back(
                make_source_spec("S" + std::to_string(i + 1), hues[i], lo[i], hi[i]));
        p.hue_margin = 0.18f;

        TargetPair t;
        t.matching_source = 2;  // T generated by S3's distribution
        t.target = p.sources[2];
        t.target.domain_id = "T1";
        t.few_shot = perturb_few_shot(t.target, rng);
        t.few_shot_count = 60;
        p.targets.push_back(std::move(t));
    } else if (preset_name == "paper30") {
        for (int i = 0; i < 30; ++i) {
            const float hue = static_cast<float>(i) / 30.0f;
            const float lo = 9.0f + static_cast<float>(i % 5) * 1.5f;
            const float hi = lo + 6.0f + static_cast<float>(i % 3) * 2.0f;
            p.sources.push_back(make_source_spec("S" + std::to_string(i + 1), hue, lo, hi));
        }
        p.hue_margin = 0.03f;
        const int match[4] = {2, 9, 16, 23};
        const int few_shot_counts[4] = {44, 80, 115, 103};
        for (int t = 0; t < 4; ++t) {
            TargetPair tp;
            tp.matching_source = match[t];
            tp.target = p.sources[match[t]];
            tp.target.domain_id = "T" + std::to_string(t + 1);
            tp.few_shot = perturb_few_shot(tp.target, rng);
            tp.few_shot_count = few_shot_counts[t];
            p.targets.push_back(std::move(tp));
        }
    } else if (preset_name == "single1") {
        p.sources.push_back(make_source_spec("S1", 0.25f, 12.0f, 20.0f));
        p.hue_margin = 0.0f;
        TargetPair t;
        t.matching_source = 0;
        t.target = p.sources[0];
        t.target.domain_id = "T1";
        t.few_shot = perturb_few_shot(t.target, rng);
        t.few_shot_count = 40;
        p.targets.push_back(std::move(t));
    } else {
        throw ConfigError("unknown preset: " + preset_name);
    }
    return p;
}

}  // namespace gatefusion
