#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tijepa/tijepa.hpp"

namespace tijepa::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

namespace detail {

inline void apply_overrides(TiJepaConfig& cfg, const std::vector<std::string>& sets) {
    for (const auto& s : sets) apply_override(cfg, s);
    cfg.validate();
}

// Backbone weights only; optimizer slots in the table are ignored.
inline TiJepaModel<float> load_backbone(const TensorTable& table, const std::vector<std::string>& sets = {}) {
    auto cfg = parse_config(table.get_bytes("meta.config"));
    apply_overrides(cfg, sets);
    TiJepaModel<float> model(cfg);
    restore_module(table, model);
    return model;
}

inline void write_split(const std::filesystem::path& path, const std::vector<PairedExample>& examples,
                        const std::filesystem::path& manifest_dir) {
    std::vector<PairedExample> rows;
    rows.reserve(examples.size());
    for (const auto& ex : examples) {
        PairedExample r;
        r.image_path = std::filesystem::absolute(manifest_dir / ex.image_path).lexically_normal().string();
        r.caption = ex.caption;
        r.label = ex.label;
        rows.push_back(std::move(r));
    }
    write_manifest(path, rows);
}

inline void check_image_sizes(const std::vector<PairedExample>& data, const TiJepaConfig& cfg) {
    for (const auto& ex : data) {
        if (ex.image.height != cfg.image_size || ex.image.width != cfg.image_size) {
            throw ShapeError("image " + ex.image_path + " is " + std::to_string(ex.image.height) + "x" +
                             std::to_string(ex.image.width) + ", config expects " + std::to_string(cfg.image_size));
        }
    }
}

inline int cmd_pretrain(const std::string& config_path, const std::string& data_path, const std::string& out_dir,
                        std::optional<std::uint64_t> seed, const std::vector<std::string>& sets,
                        const std::string& resume, std::ostream& out) {
    auto cfg = load_config(config_path);
    if (seed) cfg.seed = *seed;
    apply_overrides(cfg, sets);
    const auto data = load_manifest(data_path);
    if (data.empty()) throw FormatError("manifest " + data_path + " has no examples");
    check_image_sizes(data, cfg);

    Trainer trainer(cfg);
    if (!resume.empty()) trainer.import_state(TensorTable::load(resume));
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    {
        std::ofstream cf(dir / "config.txt");
        cf << serialize_config(cfg);
    }
    std::ofstream metrics(dir / "metrics.tsv", resume.empty() ? std::ios::trunc : std::ios::app);
    if (!metrics) throw FormatError("cannot write " + (dir / "metrics.tsv").string());
    const auto history = trainer.run(data, &metrics, dir);
    const auto final_path = dir / "final.tijp";
    trainer.export_state().save(final_path);
    out << "steps " << trainer.step() << "\n";
    if (!history.empty()) out << "final_loss " << history.back().loss << "\n";
    out << "skipped_examples " << trainer.skipped_examples() << "\n";
    out << "checkpoint " << final_path.string() << "\n";
    return kOk;
}

inline int cmd_finetune(const std::string& ckpt, const std::string& data_path, const std::string& out_dir,
                        std::uint64_t seed, const std::vector<std::string>& sets, std::ostream& out) {
    const auto model = load_backbone(TensorTable::load(ckpt), sets);
    const auto& cfg = model.cfg;
    auto data = load_manifest(data_path);
    check_image_sizes(data, cfg);
    const auto split = split_dataset(std::move(data), SplitSpec{{8, 1, 1}, seed});

    const auto train = extract_features(model, split.train, cfg.head_input);
    const auto val = extract_features(model, split.val, cfg.head_input);
    const auto test = extract_features(model, split.test, cfg.head_input);
    Rng rng = Rng::derive({seed, 0x4ead1});
    ClassificationHead<float> head(cfg.image_encoder.embed_dim, rng, cfg.init_std);
    const auto history = finetune_head(head, train, val, {cfg.head_epochs, cfg.head_lr, cfg.head_batch_size, seed});

    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    export_head(head, cfg).save(dir / "head.tijp");
    const auto base = std::filesystem::path(data_path).parent_path();
    write_split(dir / "train.tsv", split.train, base);
    write_split(dir / "val.tsv", split.val, base);
    write_split(dir / "test.tsv", split.test, base);

    out << "split " << split.train.size() << "/" << split.val.size() << "/" << split.test.size() << "\n";
    for (std::size_t e = 0; e < history.size(); ++e) out << "epoch " << e + 1 << " val_acc " << history[e] << "\n";
    out << "train_acc " << head_accuracy(head, train) << "\n";
    out << "\ntest split\n" << format_report(compute_metrics(evaluate_head(head, test)));
    out << "head " << (dir / "head.tijp").string() << "\n";
    return kOk;
}

inline int cmd_eval(const std::string& ckpt, const std::string& head_path, const std::string& data_path, bool kv,
                    std::ostream& out) {
    const auto model = load_backbone(TensorTable::load(ckpt));
    const auto head_table = TensorTable::load(head_path);
    const auto head_cfg = parse_config(head_table.get_bytes("meta.config"));
    const auto head = import_head(head_table, model.cfg.image_encoder.embed_dim);
    const auto data = load_manifest(data_path);
    check_image_sizes(data, model.cfg);
    const auto set = extract_features(model, data, head_cfg.head_input);
    const auto report = compute_metrics(evaluate_head(head, set));
    out << (kv ? format_report_kv(report) : format_report(report));
    return kOk;
}

inline int cmd_preprocess(const std::string& annotations, const std::string& mode_name, const std::string& out_path,
                          bool stats, bool split, std::uint64_t seed, std::ostream& out) {
    const AnnotationMode mode = mode_name == "multi" ? AnnotationMode::multi : AnnotationMode::single;
    const auto pairs = load_annotations(annotations);
    ReconcileStats st;
    const auto labels = reconcile_all(pairs, mode, &st);
    auto write = [](const std::filesystem::path& p, const std::vector<ReconciledLabel>& rows) {
        std::ofstream os(p);
        if (!os) throw FormatError("cannot write " + p.string());
        for (const auto& r : rows) os << r.id << '\t' << to_string(r.label) << '\n';
    };
    write(out_path, labels);
    if (split) {
        const auto parts = split_dataset(labels, SplitSpec{{8, 1, 1}, seed});
        write(out_path + ".train", parts.train);
        write(out_path + ".val", parts.val);
        write(out_path + ".test", parts.test);
    }
    if (stats) out << format_stats(st, mode == AnnotationMode::multi ? "MVSA-Multiple" : "MVSA-Single");
    return kOk;
}

inline int cmd_synth(std::size_t n, std::uint64_t seed, const std::string& out_dir, std::size_t size, bool labeled,
                     std::ostream& out) {
    auto examples = synth_generate(n, seed, size, labeled);
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir / "images");
    for (std::size_t i = 0; i < examples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "images/%06zu.ppm", i);
        examples[i].image_path = name;
        write_ppm(dir / name, examples[i].image);
    }
    write_manifest(dir / "manifest.tsv", examples);
    out << "wrote " << examples.size() << " pairs to " << (dir / "manifest.tsv").string() << "\n";
    return kOk;
}

inline int cmd_gradcheck(std::uint64_t seed, std::ostream& out) {
    bool ok = true;
    for (const auto& r : run_gradient_suite(seed)) {
        char line[160];
        std::snprintf(line, sizeof line, "%-20s %-4s rel_err=%.3e entries=%zu\n", r.name.c_str(),
                      r.passed ? "ok" : "FAIL", r.max_rel_error, r.checked);
        out << line;
        ok = ok && r.passed;
    }
    out << (ok ? "all ops passed\n" : "gradient check FAILED\n");
    return ok ? kOk : kNumerical;
}

inline int cmd_inspect(const std::string& ckpt, std::ostream& out) {
    const auto table = TensorTable::load(ckpt);
    std::size_t params = 0;
    for (const auto& [name, e] : table.entries()) {
        const char* dt = e.dtype == DType::f32 ? "f32" : (e.dtype == DType::u64 ? "u64" : "u8");
        out << name << '\t' << dt << '\t' << shape_str(e.shape) << '\n';
        if (e.dtype == DType::f32 && name.rfind("optim.", 0) != 0) params += shape_size(e.shape);
    }
    out << "tensors " << table.size() << "\nparameters " << params << "\n";
    if (table.contains("meta.counters")) {
        const auto c = table.get_u64("meta.counters");
        if (c.size() == 3) out << "step " << c[0] << "\noptimizer_step " << c[1] << "\nskipped " << c[2] << "\n";
    }
    return kOk;
}

} // namespace detail

// Parses argv, runs one subcommand, and maps failures onto exit codes.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"TI-JEPA desk-scale pretraining, fine-tuning and evaluation", "tijepa"};
    app.require_subcommand(1);
    std::vector<std::string> sets;
    std::uint64_t seed = 0;

    auto* pretrain = app.add_subcommand("pretrain", "train X and the predictor on a manifest");
    std::string config_path, data_path, out_dir, resume;
    std::optional<std::uint64_t> pretrain_seed;
    pretrain->add_option("--config", config_path, "config file (key = value)")->required();
    pretrain->add_option("--data", data_path, "manifest")->required();
    pretrain->add_option("--out", out_dir, "output directory")->required();
    pretrain->add_option("--seed", pretrain_seed, "overrides the config seed");
    pretrain->add_option("--set", sets, "override a config key, key=value");
    pretrain->add_option("--resume", resume, "continue from a checkpoint");

    auto* finetune = app.add_subcommand("finetune", "train a linear sentiment head on a frozen backbone");
    std::string ckpt;
    finetune->add_option("--ckpt", ckpt, "backbone checkpoint")->required();
    finetune->add_option("--data", data_path, "labeled manifest")->required();
    finetune->add_option("--out", out_dir, "output directory")->required();
    finetune->add_option("--seed", seed, "split and head seed");
    finetune->add_option("--set", sets, "override head_* keys, key=value");

    auto* eval = app.add_subcommand("eval", "evaluate a head on a labeled manifest");
    std::string head_path;
    bool kv = false;
    eval->add_option("--ckpt", ckpt, "backbone checkpoint")->required();
    eval->add_option("--head", head_path, "head checkpoint")->required();
    eval->add_option("--data", data_path, "labeled manifest")->required();
    eval->add_flag("--kv", kv, "key=value output");

    auto* preprocess = app.add_subcommand("preprocess-mvsa", "reconcile MVSA annotations into labels");
    std::string annotations, mode = "single";
    bool stats = false, split = false;
    preprocess->add_option("--annotations", annotations, "id<TAB>text_labels<TAB>image_labels")->required();
    preprocess->add_option("--mode", mode, "single|multi")->check(CLI::IsMember({"single", "multi"}));
    preprocess->add_option("--out", out_dir, "output label file")->required();
    preprocess->add_flag("--stats", stats, "print per-class counts");
    preprocess->add_flag("--split", split, "also write 8:1:1 .train/.val/.test files");
    preprocess->add_option("--seed", seed, "split seed");

    auto* synth = app.add_subcommand("synth", "generate colored-square pairs");
    std::size_t n = 256, size = 64;
    bool labeled = false;
    synth->add_option("--n", n, "number of pairs")->required();
    synth->add_option("--seed", seed, "generator seed");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--size", size, "image side in pixels");
    synth->add_flag("--labeled", labeled, "attach sentiment labels");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
    gradcheck->add_option("--seed", seed, "input seed");

    auto* inspect = app.add_subcommand("inspect", "list the tensors of a checkpoint");
    inspect->add_option("--ckpt", ckpt, "checkpoint")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (pretrain->parsed())
            return detail::cmd_pretrain(config_path, data_path, out_dir, pretrain_seed, sets, resume, out);
        if (finetune->parsed()) return detail::cmd_finetune(ckpt, data_path, out_dir, seed, sets, out);
        if (eval->parsed()) return detail::cmd_eval(ckpt, head_path, data_path, kv, out);
        if (preprocess->parsed())
            return detail::cmd_preprocess(annotations, mode, out_dir, stats, split, seed, out);
        if (synth->parsed()) return detail::cmd_synth(n, seed, out_dir, size, labeled, out);
        if (gradcheck->parsed()) return detail::cmd_gradcheck(seed, out);
        if (inspect->parsed()) return detail::cmd_inspect(ckpt, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return kUsage;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kData;
    }
    return kUsage;
}

} // namespace tijepa::cli
