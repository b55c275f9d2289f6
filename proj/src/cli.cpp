#include "dualmim/cli.hpp"

#include <CLI11.hpp>
#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "dualmim/checkpoint.hpp"
#include "dualmim/config.hpp"
#include "dualmim/error.hpp"
#include "dualmim/gradcheck.hpp"
#include "dualmim/masking.hpp"
#include "dualmim/metrics.hpp"
#include "dualmim/synth.hpp"
#include "dualmim/trainer.hpp"

namespace dualmim {
namespace {

namespace fs = std::filesystem;

// Settings that only the command line understands. They live in the same
// key=value namespace as the training config so the snapshot written to
// each run directory reproduces the run on its own.
const ConfigMap& tool_defaults() {
    static const ConfigMap m = {
        {"data.manifest", ""},         // manifest file or corpus directory
        {"data.image", ""},            // mask-preview input
        {"data.images", ""},           // recon-eval input directory
        {"data.reference", ""},        // metrics inputs
        {"data.candidate", ""},
        {"init.checkpoint", ""},       // finetune/recon-eval/mask-preview weights, pretrain resume point
        {"run.stop_after", "0"},       // pretrain: stop after this many completed steps (0 = run to the end)
        {"stats.draws", "30000"},
        {"synth.image_size", "72"},
        {"synth.counts", "400,100,25"},
        {"gradcheck.corrupt", ""},     // test hook: perturb this parameter's analytic gradient
        {"gradcheck.threshold", "1e-4"},
        {"recon.identity", "false"},   // test hook: reconstruction = input, no model
    };
    return m;
}

struct Settings {
    TrainConfig cfg;
    ConfigMap tool = tool_defaults();

    ConfigMap snapshot() const {
        ConfigMap all = to_config_map(cfg);
        all.insert(tool.begin(), tool.end());
        return all;
    }
    const std::string& get(const std::string& key) const { return tool.at(key); }
};

struct CommonFlags {
    std::string config_file;
    std::optional<std::uint64_t> seed;
    std::string out = "runs";
    std::string name;
    std::vector<std::string> sets;
    ConfigMap from_flags;  // subcommand options mapped onto keys
};

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t x = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
        throw Error(ErrorCode::invalid_config, "bad value for " + key + ": '" + v + "'");
    }
    return x;
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw Error(ErrorCode::invalid_config, "bad value for " + key + ": '" + v + "'");
    return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error(ErrorCode::invalid_config, "bad value for " + key + ": '" + v + "'");
}

Settings resolve(const CommonFlags& f, TrainMode mode) {
    ConfigMap merged;
    if (!f.config_file.empty()) merged = read_config_file(f.config_file);
    for (const auto& s : f.sets) {
        auto [k, v] = parse_override(s);
        merged[k] = v;
    }
    for (const auto& [k, v] : f.from_flags) merged[k] = v;
    if (f.seed) merged["seed"] = std::to_string(*f.seed);

    Settings s;
    s.cfg.mode = mode;
    ConfigMap train;
    for (const auto& [k, v] : merged) {
        if (s.tool.count(k)) {
            s.tool[k] = v;
        } else {
            train[k] = v;
        }
    }
    apply_config(s.cfg, train);
    // the subcommand decides between pre-training and fine-tuning
    if (mode == TrainMode::pretrain) {
        s.cfg.mode = TrainMode::pretrain;
    } else if (s.cfg.mode == TrainMode::pretrain) {
        s.cfg.mode = TrainMode::finetune_frozen;
    }
    return s;
}

std::string timestamp() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    localtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
    return buf;
}

// <out>/<timestamp>-seed<seed>, with a numeric suffix if that already exists.
fs::path make_run_dir(const CommonFlags& f, const Settings& s) {
    const fs::path base = f.out;
    std::string stem = f.name.empty() ? timestamp() + "-seed" + std::to_string(s.cfg.seed) : f.name;
    fs::path dir = base / stem;
    for (int k = 1; fs::exists(dir) && f.name.empty(); ++k) dir = base / (stem + "-" + std::to_string(k));
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::unwritable_path, "cannot create run directory: " + dir.string());
    std::ofstream snap(dir / "config.cfg");
    snap << format_config(s.snapshot());
    if (!snap) throw Error(ErrorCode::unwritable_path, "cannot write " + (dir / "config.cfg").string());
    return dir;
}

DatasetManifest load_dataset(const std::string& where) {
    if (where.empty()) throw Error(ErrorCode::invalid_config, "no dataset given (--data or data.manifest)");
    const fs::path p = where;
    if (!fs::exists(p)) throw Error(ErrorCode::missing_file, "dataset not found: " + p.string());
    if (fs::is_directory(p)) {
        if (fs::exists(p / "manifest.tsv")) return read_manifest(p / "manifest.tsv");
        return build_manifest(p);
    }
    return read_manifest(p);
}

FloatField load_image(const std::string& path) { return normalize(load_png(path)); }

void save_field(const FloatField& f, const fs::path& p) { save_png(quantize(f), p); }

// Model settings come from the checkpoint; the image views follow them.
void adopt_model(TrainConfig& cfg, const ModelConfig& model) {
    cfg.model = model;
    cfg.model.classes = 0;
    cfg.augment.out_h = cfg.augment.out_w = model.image_size;
}

FreqMaskConfig freq_config(const TrainConfig& cfg) {
    FreqMaskConfig f;
    f.height = f.width = cfg.model.image_size;
    f.n_bands = cfg.n_bands;
    f.n_select = cfg.n_select;
    f.preserve = cfg.preserve;
    return f;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
}

void print_table(std::ostream& out, const std::vector<std::pair<std::string, double>>& rows) {
    out << "metric\tvalue\n";
    for (const auto& [k, v] : rows) out << k << '\t' << fmt(v) << '\n';
}

std::vector<std::pair<std::string, double>> classification_rows(const ClassificationMetrics& m) {
    return {{"acc", m.acc}, {"recall", m.recall}, {"precision", m.precision}, {"f1", m.f1}, {"mcc", m.mcc}};
}

void write_rows(const fs::path& file, const std::vector<std::pair<std::string, double>>& rows) {
    std::ofstream f(file);
    f << "metric\tvalue\n";
    for (const auto& [k, v] : rows) f << k << '\t' << std::setprecision(17) << v << '\n';
}

// ---- subcommands ------------------------------------------------------------

int cmd_pretrain(const Settings& s, const fs::path& run, std::ostream& out) {
    const DatasetManifest manifest = load_dataset(s.get("data.manifest"));
    TrainingState st;
    if (const auto& ck = s.get("init.checkpoint"); !ck.empty()) {
        st = load_checkpoint(ck);
        out << "resuming from " << ck << " at step " << st.step << '\n';
    } else {
        st = start_pretraining(s.cfg);
    }
    RunOptions opts{run, std::nullopt};
    if (const auto stop = parse_u64("run.stop_after", s.get("run.stop_after")); stop > 0) opts.stop_after = stop;
    const TrainReport r = pretrain(st, manifest, opts);
    const std::size_t every = std::max<std::size_t>(1, st.config.steps / 10);
    out << "step\tlr\ttotal\tspatial\tfrequency\n";
    for (const auto& rec : r.records) {
        if (rec.step % every == 0 || &rec == &r.records.back()) {
            out << rec.step << '\t' << fmt(rec.lr) << '\t' << fmt(rec.loss.total) << '\t' << fmt(rec.loss.spatial)
                << '\t' << fmt(rec.loss.frequency) << '\n';
        }
    }
    out << "checkpoint\t" << r.checkpoint.string() << '\n';
    out << "seconds\t" << fmt(r.wall_seconds) << '\n';
    return 0;
}

int cmd_finetune(Settings s, const fs::path& run, std::ostream& out) {
    const DatasetManifest manifest = load_dataset(s.get("data.manifest"));
    ModelState init;
    if (const auto& ck = s.get("init.checkpoint"); !ck.empty()) {
        TrainingState st = load_checkpoint(ck);
        adopt_model(s.cfg, st.model.config);
        init = std::move(st.model);
    } else {
        // random-init features
        Rng rng(s.cfg.seed);
        Rng init_rng = rng.fork();
        ModelConfig m = s.cfg.model;
        m.classes = 0;
        init = init_model(m, init_rng);
    }
    const TrainReport r = finetune(s.cfg, init, manifest, nullptr, {run, std::nullopt});
    {
        std::ofstream log(run / "finetune.tsv");
        log << "step\tlr\tloss\n";
        for (const auto& rec : r.records) {
            log << rec.step << '\t' << std::setprecision(17) << rec.lr << '\t' << rec.loss.total << '\n';
        }
    }
    auto rows = r.validation ? classification_rows(*r.validation) : std::vector<std::pair<std::string, double>>{};
    rows.emplace_back("train_acc", r.train_accuracy);
    rows.emplace_back("train_size", static_cast<double>(r.train_indices.size()));
    rows.emplace_back("best_step", static_cast<double>(r.best_step));
    if (!r.validation) out << "no validation split (finetune.val_fraction=0); metrics are on the training set\n";
    print_table(out, rows);
    write_rows(run / "report.tsv", rows);
    out << "checkpoint\t" << r.checkpoint.string() << '\n';
    return 0;
}

GrayImage mask_png(const FreqMask& m) {
    GrayImage g(m.height, m.width);
    for (std::size_t i = 0; i < m.keep.size(); ++i) g.data[i] = m.keep[i] ? 255 : 0;
    return g;
}

FloatField side_by_side(const std::vector<FloatField>& panels) {
    std::size_t w = 0;
    for (const auto& p : panels) w += p.width;
    FloatField out(panels.front().height, w);
    std::size_t x0 = 0;
    for (const auto& p : panels) {
        for (std::size_t y = 0; y < p.height; ++y)
            for (std::size_t x = 0; x < p.width; ++x) out.at(y, x0 + x) = p.at(y, x);
        x0 += p.width;
    }
    return out;
}

// log(1 + |F|) with DC at the centre, scaled to [0, 1]
FloatField log_amplitude_view(const FloatField& f) {
    FloatField a = amplitude(center_shift(dft2(f)));
    double hi = 0.0;
    for (double& v : a.data) {
        v = std::log1p(v);
        hi = std::max(hi, v);
    }
    if (hi > 0.0)
        for (double& v : a.data) v /= hi;
    return a;
}

int cmd_mask_preview(Settings s, const fs::path& run, std::ostream& out) {
    const std::string& input = s.get("data.image");
    if (input.empty()) throw Error(ErrorCode::invalid_config, "mask-preview needs an input image");
    std::optional<TrainingState> ck;
    if (const auto& p = s.get("init.checkpoint"); !p.empty()) {
        ck = load_checkpoint(p);
        adopt_model(s.cfg, ck->model.config);
    }
    s.cfg.validate();
    const TrainConfig& cfg = s.cfg;
    const FloatField x = eval_view(load_image(input), cfg);
    Rng rng(cfg.seed);
    const std::size_t g = cfg.model.grid();
    const SpatialMask sm = sample_spatial_mask(rng, g, g, cfg.model.patch_size, cfg.mask_ratio);
    const FreqMask fm = cfg.freq_mask ? sample_freq_mask(rng, freq_config(cfg)) : FreqMask(x.height, x.width);

    FloatField visible(x.height, x.width);
    for (std::size_t y = 0; y < x.height; ++y)
        for (std::size_t c = 0; c < x.width; ++c) visible.at(y, c) = sm.pixel_masked(y, c) ? 0.0 : 1.0;
    const FloatField spatial = apply_spatial_mean_mask(x, sm);
    const FloatField freq = idft2(apply_freq_mask(dft2(x), fm));
    const FloatField dual = dual_mask(x, sm, fm).image;

    save_field(x, run / "original.png");
    save_field(visible, run / "spatial_mask.png");
    save_field(spatial, run / "spatial_masked.png");
    save_png(mask_png(fm), run / "freq_mask.png");
    save_field(freq, run / "freq_masked.png");
    save_field(dual, run / "dual_masked.png");
    std::vector<FloatField> panel{x, spatial, FloatField(x.height, x.width), freq, dual};
    for (std::size_t i = 0; i < fm.keep.size(); ++i) panel[2].data[i] = fm.keep[i];
    if (ck) {
        const std::vector<FloatField> in{dual};
        const FloatField rec = forward_mim(ck->model, in).reconstructions[0];
        save_field(rec, run / "reconstruction.png");
        const FloatField spec = log_amplitude_view(rec);
        save_field(spec, run / "reconstruction_spectrum.png");
        panel.push_back(rec);
        panel.push_back(spec);
    }
    save_field(side_by_side(panel), run / "panel.png");

    std::size_t kept = 0;
    for (auto k : fm.keep) kept += k;
    out << "masked_patches\t" << sm.masked_count() << '/' << g * g << '\n';
    out << "bands_stopped\t";
    for (std::size_t i = 0; i < fm.bands_stopped.size(); ++i) out << (i ? "," : "") << fm.bands_stopped[i];
    out << '\n' << "kept_bins\t" << kept << '/' << fm.keep.size() << '\n';
    out << "output\t" << run.string() << '\n';
    return 0;
}

std::vector<fs::path> png_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::missing_file, "image directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw Error(ErrorCode::empty_dataset, "no PNG files under " + dir.string());
    return files;
}

int cmd_recon_eval(Settings s, const fs::path& run, std::ostream& out) {
    const bool identity = parse_bool("recon.identity", s.get("recon.identity"));
    std::optional<TrainingState> ck;
    if (const auto& p = s.get("init.checkpoint"); !p.empty()) {
        ck = load_checkpoint(p);
        adopt_model(s.cfg, ck->model.config);
    } else if (!identity) {
        throw Error(ErrorCode::invalid_config, "recon-eval needs a checkpoint (--checkpoint)");
    }
    s.cfg.validate();
    const TrainConfig& cfg = s.cfg;
    const auto files = png_files(s.get("data.images"));
    Rng rng(cfg.seed);
    const std::size_t g = cfg.model.grid();

    std::ofstream per(run / "recon_eval.tsv");
    per << "image\tssim\tlncc\tnmi\tl1\n";
    double sums[4] = {0, 0, 0, 0};
    constexpr std::size_t kChunk = 16;
    for (std::size_t b0 = 0; b0 < files.size(); b0 += kChunk) {
        const std::size_t b1 = std::min(files.size(), b0 + kChunk);
        std::vector<FloatField> views, inputs, recs;
        for (std::size_t i = b0; i < b1; ++i) {
            views.push_back(eval_view(load_image(files[i].string()), cfg));
            const SpatialMask sm = sample_spatial_mask(rng, g, g, cfg.model.patch_size, cfg.mask_ratio);
            const FreqMask fm = cfg.freq_mask ? sample_freq_mask(rng, freq_config(cfg))
                                              : FreqMask(cfg.model.image_size, cfg.model.image_size);
            inputs.push_back(dual_mask(views.back(), sm, fm).image);
        }
        recs = identity ? views : forward_mim(ck->model, inputs).reconstructions;
        for (std::size_t k = 0; k < views.size(); ++k) {
            FloatField rec = recs[k];
            for (double& v : rec.data) v = std::clamp(v, 0.0, 1.0);
            double l1 = 0.0;
            for (std::size_t i = 0; i < rec.size(); ++i) l1 += std::abs(rec.data[i] - views[k].data[i]);
            l1 /= static_cast<double>(rec.size());
            const double m[4] = {ssim(rec, views[k]), lncc(rec, views[k]), nmi(rec, views[k]), l1};
            per << fs::relative(files[b0 + k], s.get("data.images")).string();
            for (int j = 0; j < 4; ++j) {
                sums[j] += m[j];
                per << '\t' << std::setprecision(17) << m[j];
            }
            per << '\n';
        }
    }
    const double n = static_cast<double>(files.size());
    const std::vector<std::pair<std::string, double>> rows = {
        {"ssim", sums[0] / n}, {"lncc", sums[1] / n}, {"nmi", sums[2] / n}, {"l1", sums[3] / n}, {"images", n}};
    print_table(out, rows);
    write_rows(run / "report.tsv", rows);
    return 0;
}

int cmd_sampler_stats(const Settings& s, const fs::path& run, std::ostream& out) {
    const DatasetManifest manifest = load_dataset(s.get("data.manifest"));
    manifest.validate();
    const std::uint64_t draws = parse_u64("stats.draws", s.get("stats.draws"));
    if (draws == 0) throw Error(ErrorCode::invalid_config, "stats.draws must be >= 1");
    const SamplerWeights w = organ_weights(manifest);
    Rng rng(s.cfg.seed);
    std::vector<std::uint64_t> hits(manifest.organs.size(), 0);
    for (std::uint64_t i = 0; i < draws; ++i) ++hits[sample_image(rng, manifest, w).organ_index];

    const double n = static_cast<double>(draws);
    double chi2 = 0.0;
    std::ofstream f(run / "sampler_stats.tsv");
    std::ostringstream table;
    table << "organ\timages\texpected\tempirical\tdraws\n";
    for (std::size_t o = 0; o < hits.size(); ++o) {
        const double expect = w.weights[o] * n;
        chi2 += (static_cast<double>(hits[o]) - expect) * (static_cast<double>(hits[o]) - expect) / expect;
        table << manifest.organs[o].name << '\t' << manifest.organs[o].count() << '\t' << fmt(w.weights[o]) << '\t'
              << fmt(static_cast<double>(hits[o]) / n) << '\t' << hits[o] << '\n';
    }
    const std::size_t dof = hits.size() - 1;
    const double p = dof == 0 ? 1.0 : boost::math::cdf(boost::math::complement(boost::math::chi_squared(static_cast<double>(dof)), chi2));
    table << "chi_square\t" << fmt(chi2) << "\ndof\t" << dof << "\np_value\t" << fmt(p) << '\n';
    out << table.str();
    f << table.str();
    return 0;
}

int cmd_gradcheck(const Settings& s, const fs::path& run, std::ostream& out) {
    const double threshold = parse_double("gradcheck.threshold", s.get("gradcheck.threshold"));
    const std::string corrupt = s.get("gradcheck.corrupt");
    const TrainConfig& cfg = s.cfg;

    GradcheckConfig gc;
    gc.lambda = cfg.lambda;
    gc.alpha = cfg.alpha;
    gc.seed = cfg.seed;
    gc.mask_ratio = cfg.mask_ratio;

    Rng probe_rng(0);
    const ModelState probe = init_model(gc.model, probe_rng);
    if (!corrupt.empty() && !probe.has(corrupt)) {
        throw Error(ErrorCode::invalid_argument, "no parameter named " + corrupt + " in the gradient-check model");
    }

    std::ofstream detail(run / "gradcheck.tsv");
    detail << "suite\tparameter\tindex\tanalytic\tnumeric\trel_error\n";
    bool ok = true;
    auto report = [&](const std::string& suite, const GradcheckResult& r) {
        for (const auto& e : r.entries) {
            detail << suite << '\t' << e.name << '\t' << e.index << '\t' << std::setprecision(17) << e.analytic << '\t'
                   << e.numeric << '\t' << e.rel_error << '\n';
        }
        const bool pass = r.worst.rel_error <= threshold;
        ok = ok && pass;
        out << suite << '\t' << (pass ? "PASS" : "FAIL") << "\tworst=" << fmt(r.worst.rel_error) << "\tat="
            << r.worst.name << '[' << r.worst.index << "]\tchecked=" << r.checked;
        if (r.skipped_kinks) out << "\tskipped_kinks=" << r.skipped_kinks;
        out << '\n';
    };

    report("loss.spatial", gradcheck_loss(16, 0.0, cfg.alpha, cfg.seed));
    if (cfg.lambda > 0.0) {
        report("loss.frequency", gradcheck_loss(16, cfg.lambda, cfg.alpha, cfg.seed));
    } else {
        out << "loss.frequency\tSKIPPED\tlambda is 0, the frequency term does not contribute\n";
    }
    std::function<void(Gradients&)> hook;
    if (!corrupt.empty()) {
        hook = [&](Gradients& g) {
            auto& t = g.grads.at(probe.index_of(corrupt));
            for (double& v : t.data) v = v * 1.5 + 0.01;
        };
    }
    report("model", gradcheck_model(gc, hook));
    out << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (threshold " << fmt(threshold) << ")\n";
    return ok ? 0 : 1;
}

bool is_png(const std::string& p) { return fs::path(p).extension() == ".png"; }

std::vector<std::string> read_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::missing_file, "cannot read label file: " + path);
    std::vector<std::string> labels;
    for (std::string line; std::getline(in, line);) {
        std::istringstream ls(line);
        std::string tok;
        if (ls >> tok) labels.push_back(tok);
    }
    return labels;
}

int cmd_metrics(const Settings& s, const fs::path& run, std::ostream& out) {
    const std::string& a = s.get("data.reference");
    const std::string& b = s.get("data.candidate");
    if (a.empty() || b.empty()) throw Error(ErrorCode::invalid_config, "metrics needs two inputs");
    std::vector<std::pair<std::string, double>> rows;
    if (is_png(a) && is_png(b)) {
        const FloatField x = load_image(a), y = load_image(b);
        if (!x.same_shape(y)) throw Error(ErrorCode::shape_mismatch, "images differ in size: " + a + ", " + b);
        double l1 = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) l1 += std::abs(x.data[i] - y.data[i]);
        rows = {{"ssim", ssim(x, y)}, {"lncc", lncc(x, y)}, {"nmi", nmi(x, y)}, {"l1", l1 / static_cast<double>(x.size())}};
    } else if (!is_png(a) && !is_png(b)) {
        const auto truth = read_labels(a), pred = read_labels(b);
        if (truth.size() != pred.size()) {
            throw Error(ErrorCode::label_mismatch, "label files differ in length: " + std::to_string(truth.size()) +
                                                       " vs " + std::to_string(pred.size()));
        }
        if (truth.empty()) throw Error(ErrorCode::empty_dataset, "label files are empty");
        std::set<std::string> names(truth.begin(), truth.end());
        names.insert(pred.begin(), pred.end());
        const std::vector<std::string> classes(names.begin(), names.end());
        auto index = [&](const std::string& l) {
            return static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), l) - classes.begin());
        };
        ConfusionMatrix cm(classes.size());
        for (std::size_t i = 0; i < truth.size(); ++i) cm.add(index(truth[i]), index(pred[i]));
        rows = classification_rows(classification_metrics(cm));
    } else {
        throw Error(ErrorCode::invalid_argument, "metrics compares two PNGs or two label files, not one of each");
    }
    print_table(out, rows);
    write_rows(run / "metrics.tsv", rows);
    return 0;
}

int cmd_synth(const Settings& s, const fs::path& run, std::ostream& out) {
    SynthSpec spec = SynthSpec::defaults();
    spec.seed = s.cfg.seed;
    spec.image_size = parse_u64("synth.image_size", s.get("synth.image_size"));
    // default bands are given for 72-pixel images; keep them at the same relative frequency
    const double scale = static_cast<double>(spec.image_size) / 72.0;
    for (auto& o : spec.organs) {
        o.band_lo *= scale;
        o.band_hi *= scale;
    }
    std::vector<std::size_t> counts;
    std::stringstream ss(s.get("synth.counts"));
    for (std::string tok; std::getline(ss, tok, ',');) counts.push_back(parse_u64("synth.counts", tok));
    if (counts.size() != spec.organs.size()) {
        throw Error(ErrorCode::invalid_config, "synth.counts needs " + std::to_string(spec.organs.size()) + " values");
    }
    for (std::size_t i = 0; i < counts.size(); ++i) spec.organs[i].count = counts[i];
    const DatasetManifest m = generate(spec, run / "corpus");
    out << "organ\timages\n";
    for (const auto& o : m.organs) out << o.name << '\t' << o.count() << '\n';
    out << "manifest\t" << (run / "corpus" / "manifest.tsv").string() << '\n';
    return 0;
}

void add_common(CLI::App* sub, CommonFlags& f) {
    sub->add_option("--config", f.config_file, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "random seed (overrides the config)");
    sub->add_option("--out", f.out, "parent directory for the run directory")->capture_default_str();
    sub->add_option("--name", f.name, "run directory name (default: timestamp and seed)");
    sub->add_option("--set", f.sets, "override a setting, key=value (repeatable)");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"dual-domain masked image modelling: pre-training, fine-tuning and diagnostics", "dualmim"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "help for every subcommand");

    CommonFlags flags;
    std::string data, checkpoint, image, images, reference, candidate, corrupt;
    std::optional<std::uint64_t> draws, stop_after;
    bool identity = false;

    struct Entry {
        CLI::App* app;
        TrainMode mode;
        std::function<int(const Settings&, const fs::path&)> run;
    };
    std::vector<Entry> entries;
    auto add = [&](const char* name, const char* help, TrainMode mode, auto fn) {
        CLI::App* sub = app.add_subcommand(name, help);
        add_common(sub, flags);
        entries.push_back({sub, mode, [fn, &out](const Settings& s, const fs::path& r) { return fn(s, r, out); }});
        return sub;
    };

    auto* pre = add("pretrain", "dual-masked reconstruction pre-training", TrainMode::pretrain, cmd_pretrain);
    pre->add_option("--data", data, "manifest file or corpus directory");
    pre->add_option("--resume", checkpoint, "continue from a checkpoint");
    pre->add_option("--stop-after", stop_after, "stop once this many steps are complete");

    auto* ft = add("finetune", "classification fine-tuning or linear probe", TrainMode::finetune_frozen, cmd_finetune);
    ft->add_option("--data", data, "labelled manifest file or corpus directory");
    ft->add_option("--checkpoint", checkpoint, "pre-trained checkpoint (omit for random-init features)");

    auto* mp = add("mask-preview", "write the spatial, frequency and dual masks of one image as PNGs",
                   TrainMode::pretrain, cmd_mask_preview);
    mp->add_option("image", image, "input PNG")->required();
    mp->add_option("--checkpoint", checkpoint, "also write the model reconstruction");

    auto* re = add("recon-eval", "reconstruct a directory of images and report SSIM/LNCC/NMI/L1", TrainMode::pretrain,
                   cmd_recon_eval);
    re->add_option("images", images, "directory of PNGs")->required();
    re->add_option("--checkpoint", checkpoint, "model checkpoint");
    re->add_flag("--identity", identity, "test hook: skip the model, reconstruction = input");

    auto* ss = add("sampler-stats", "organ-balanced sampler: expected vs empirical frequencies", TrainMode::pretrain,
                   cmd_sampler_stats);
    ss->add_option("--data", data, "manifest file or corpus directory");
    ss->add_option("--draws", draws, "number of draws (default 30000)");

    auto* gc = add("gradcheck", "finite-difference checks of the loss and model gradients", TrainMode::pretrain,
                   cmd_gradcheck);
    gc->add_option("--corrupt", corrupt, "test hook: perturb the analytic gradient of this parameter");

    auto* me = add("metrics", "compare two PNGs or two label files", TrainMode::pretrain, cmd_metrics);
    me->add_option("reference", reference, "reference PNG or true-label file")->required();
    me->add_option("candidate", candidate, "candidate PNG or predicted-label file")->required();

    add("synth", "generate the synthetic organ corpus", TrainMode::pretrain, cmd_synth);

    std::vector<const char*> argv{"dualmim"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    auto set_if = [&](const char* key, const std::string& v) {
        if (!v.empty()) flags.from_flags[key] = v;
    };
    set_if("data.manifest", data);
    set_if("init.checkpoint", checkpoint);
    set_if("data.image", image);
    set_if("data.images", images);
    set_if("data.reference", reference);
    set_if("data.candidate", candidate);
    set_if("gradcheck.corrupt", corrupt);
    if (draws) flags.from_flags["stats.draws"] = std::to_string(*draws);
    if (stop_after) flags.from_flags["run.stop_after"] = std::to_string(*stop_after);
    if (identity) flags.from_flags["recon.identity"] = "true";

    for (const auto& e : entries) {
        if (!e.app->parsed()) continue;
        try {
            const Settings s = resolve(flags, e.mode);
            const fs::path run = make_run_dir(flags, s);
            out << "run\t" << run.string() << '\n';
            return e.run(s, run);
        } catch (const Error& ex) {
            err << "error: " << ex.what() << '\n';
            return 1;
        } catch (const std::exception& ex) {
            err << "error: " << ex.what() << '\n';
            return 1;
        }
    }
    return 1;
}

}  // namespace dualmim
