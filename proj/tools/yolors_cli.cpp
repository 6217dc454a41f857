// Command-line surface: dataset synthesis, training, evaluation,
// augmentation, ablation runs, rendering, gradient checks, and FLOP reports.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "yolors/ablation.hpp"
#include "yolors/augment.hpp"
#include "yolors/checkpoint.hpp"
#include "yolors/config.hpp"
#include "yolors/dataset.hpp"
#include "yolors/detector.hpp"
#include "yolors/gradsuite.hpp"
#include "yolors/metrics.hpp"

namespace fs = std::filesystem;
using namespace yolors;

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string eval_markdown(const EvalReport& r) {
  char buf[256];
  std::string md = "| metric | value |\n|---|---|\n";
  std::snprintf(buf, sizeof buf, "| precision | %.4f |\n", r.precision);
  md += buf;
  std::snprintf(buf, sizeof buf, "| recall | %.4f |\n", r.recall);
  md += buf;
  std::snprintf(buf, sizeof buf, "| f1 | %.4f |\n", r.f1);
  md += buf;
  std::snprintf(buf, sizeof buf, "| mAP@.5 | %.4f |\n", r.maps.map50);
  md += buf;
  std::snprintf(buf, sizeof buf, "| mAP@.5-.95 | %.4f |\n", r.maps.map50_95);
  md += buf;
  return md;
}

void write_train_log(const std::string& path, const TrainResult& r) {
  std::ofstream out(path);
  for (const auto& e : r.log) {
    nlohmann::json j;
    j["epoch"] = e.epoch;
    j["loss"] = e.total;
    j["loss_x"] = e.lx;
    j["loss_c"] = e.lc;
    j["loss_l1"] = e.ll1;
    j["g_loss"] = e.g_loss;
    j["d_loss"] = e.d_loss;
    j["lr"] = e.lr;
    out << j.dump() << "\n";
  }
}

void add_toggle_flags(CLI::App* cmd, Toggles& t) {
  cmd->add_flag("--no-caa", [&t](int64_t) { t.caa = false; }, "disable the attention module");
  cmd->add_flag("--no-rfaconv", [&t](int64_t) { t.rfaconv = false; },
                "disable the multi-kernel receptive-field stage");
  cmd->add_flag("--no-bifpn", [&t](int64_t) { t.bifpn = false; },
                "disable bidirectional weighted fusion");
  cmd->add_flag("--no-acmix", [&t](int64_t) { t.acmix = false; },
                "disable class-rebalancing augmentation");
  cmd->add_flag("--no-self-attention", [&t](int64_t) { t.self_attention = false; },
                "disable every attention mechanism");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale small-object detector with contextual attention, weighted\n"
               "bidirectional fusion, adversarial feature coupling, and class-rebalancing\n"
               "augmentation"};
  app.require_subcommand(1);
  app.fallthrough();  // lets --config follow the subcommand
  app.set_config("--config", "", "structured-text config (key = value, [section] headers); "
                                 "command-line flags take precedence");

  const std::string out_dir = default_out_dir();

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "generate a synthetic detection dataset");
  SyntheticSpec spec;
  std::string synth_out = out_dir + "/dataset";
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--seed", spec.seed, "generator seed");
  synth->add_option("--images", spec.train_count, "training images");
  synth->add_option("--val", spec.val_count, "validation images");
  synth->add_option("--classes", spec.classes, "class count");
  synth->add_option("--size", spec.image_size, "square image size");
  synth->add_option("--ratio", spec.imbalance_ratio, "class-0 imbalance ratio (>= 1)");
  synth->add_option("--objects-min", spec.objects_min, "min objects per image");
  synth->add_option("--objects-max", spec.objects_max, "max objects per image");
  synth->add_option("--object-min-px", spec.object_min_px, "min object side, pixels");
  synth->add_option("--object-max-px", spec.object_max_px, "max object side, pixels");
  synth->add_option("--noise", spec.noise, "background noise amplitude");

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "train a detector on a dataset directory");
  std::string train_data, train_out = out_dir + "/run";
  ModelConfig tcfg;
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--out", train_out, "output directory");
  train_cmd->add_option("--seed", tcfg.seed, "training seed");
  train_cmd->add_option("--epochs", tcfg.epochs, "epochs");
  train_cmd->add_option("--batch", tcfg.batch_size, "batch size");
  train_cmd->add_option("--lr", tcfg.lr, "initial learning rate");
  train_cmd->add_option("--lr-final", tcfg.lr_final, "final learning rate (cosine)");
  train_cmd->add_option("--warmup", tcfg.warmup_epochs, "warmup epochs");
  train_cmd->add_option("--pyramid-channels", tcfg.pyramid_channels, "pyramid width");
  train_cmd->add_option("--lambda-x", tcfg.lambda_x, "coordinate loss weight");
  train_cmd->add_option("--lambda-c", tcfg.lambda_c, "confidence loss weight");
  train_cmd->add_option("--lambda-l1", tcfg.lambda_l1, "sparsity loss weight");
  train_cmd->add_option("--lambda-gan", tcfg.lambda_gan, "adversarial generator loss weight");
  train_cmd->add_option("--augment-multiplier", tcfg.augment_multiplier,
                        "acmix per-epoch dataset multiplier");
  train_cmd->add_option("--augment-strength", tcfg.augment_strength, "acmix contrast strength");
  add_toggle_flags(train_cmd, tcfg.toggles);

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string eval_data, eval_ckpt, eval_out = out_dir + "/eval";
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--out", eval_out, "output directory");

  // ---- augment ----
  auto* aug_cmd = app.add_subcommand("augment", "expand a dataset with the rebalancing pipeline");
  std::string aug_data, aug_out = out_dir + "/augmented";
  AugmentConfig acfg;
  std::string geo = "hflip";
  aug_cmd->add_option("--data", aug_data, "dataset directory")->required();
  aug_cmd->add_option("--out", aug_out, "output directory");
  aug_cmd->add_option("--multiplier", acfg.multiplier, "output size multiplier (>= 1)");
  aug_cmd->add_option("--strength", acfg.strength, "contrast strength");
  aug_cmd->add_option("--beta", acfg.beta_param, "symmetric Beta parameter for blending");
  aug_cmd->add_option("--seed", acfg.seed, "augmentation seed");
  aug_cmd->add_option("--geometric", geo, "comma list of crop,scale,rotate90,hflip,vflip");

  // ---- ablate ----
  auto* abl_cmd = app.add_subcommand("ablate", "train and evaluate ablation variants");
  std::string abl_data, abl_out = out_dir + "/ablation", abl_variants, abl_seeds = "1,2,3";
  ModelConfig abl_cfg;
  abl_cfg.epochs = 10;
  abl_cfg.lr = 0.01;
  abl_cfg.lr_final = 0.0002;
  SyntheticSpec abl_spec;
  abl_spec.train_count = 48;
  abl_spec.val_count = 24;
  abl_cmd->add_option("--data", abl_data, "dataset directory (omit to synthesize per seed)");
  abl_cmd->add_option("--out", abl_out, "output directory");
  abl_cmd->add_option("--variants", abl_variants,
      "comma list: full,no-rfaconv,no-bifpn,no-self-attention,no-rfafpn,no-caa,no-acmix");
  abl_cmd->add_option("--seeds", abl_seeds, "comma list of seeds");
  abl_cmd->add_option("--epochs", abl_cfg.epochs, "epochs per run");
  abl_cmd->add_option("--batch", abl_cfg.batch_size, "batch size");
  abl_cmd->add_option("--lr", abl_cfg.lr, "initial learning rate");
  abl_cmd->add_option("--images", abl_spec.train_count, "synthetic training images per seed");
  abl_cmd->add_option("--val", abl_spec.val_count, "synthetic validation images per seed");
  abl_cmd->add_option("--ratio", abl_spec.imbalance_ratio, "synthetic imbalance ratio");

  // ---- render ----
  auto* render_cmd = app.add_subcommand("render", "draw truth boxes and predictions on an image");
  std::string r_image, r_labels, r_ckpt, r_cfg_json, r_out = "render.ppm";
  render_cmd->add_option("--image", r_image, "input P6 image")->required();
  render_cmd->add_option("--labels", r_labels, "label file for ground truth");
  render_cmd->add_option("--checkpoint", r_ckpt, "checkpoint to produce predictions");
  render_cmd->add_option("--model-config", r_cfg_json, "model config json next to the checkpoint");
  render_cmd->add_option("--out", r_out, "output P6 path");

  // ---- gradcheck ----
  auto* grad_cmd = app.add_subcommand("gradcheck", "run the central-difference gradient suite");
  double grad_tol = 1e-4;
  grad_cmd->add_option("--tolerance", grad_tol, "max relative error allowed");

  // ---- flops ----
  auto* flops_cmd = app.add_subcommand("flops", "analytic per-module FLOP report");
  ModelConfig fcfg;
  flops_cmd->add_option("--input-size", fcfg.input_size, "input side");
  flops_cmd->add_option("--pyramid-channels", fcfg.pyramid_channels, "pyramid width");
  flops_cmd->add_option("--classes", fcfg.classes, "class count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage errors exit 2
  }

  try {
    if (*synth) {
      spec.validate();
      fs::create_directories(synth_out);
      DatasetManifest m = generate_synthetic(spec, synth_out);
      std::cout << "wrote " << m.train.size() << " train / " << m.val.size() << " val images to "
                << synth_out << "\n";
    } else if (*train_cmd) {
      InMemoryDataset data = load_dataset(train_data);
      tcfg.input_size = data.image_size;
      tcfg.classes = static_cast<int>(data.class_names.size());
      fs::create_directories(train_out);
      Model model = build_model(tcfg);
      TrainResult result = train(model, data.train);
      auto params = model.parameters();
      save_checkpoint(train_out + "/checkpoint.bin", params);
      write_text(train_out + "/model_config.json", model_config_to_json(tcfg).dump(2) + "\n");
      write_train_log(train_out + "/train_log.jsonl", result);
      EvalReport ev = evaluate_model(model, data.val.empty() ? data.train : data.val);
      write_text(train_out + "/eval.json", eval_report_to_json(ev).dump(2) + "\n");
      write_text(train_out + "/eval.md", eval_markdown(ev));
      std::cout << "final loss " << result.log.back().total << ", val mAP@.5 " << ev.maps.map50
                << "; artifacts in " << train_out << "\n";
    } else if (*eval_cmd) {
      InMemoryDataset data = load_dataset(eval_data);
      const std::string cfg_path =
          (fs::path(eval_ckpt).parent_path() / "model_config.json").string();
      ModelConfig cfg;
      if (fs::exists(cfg_path)) {
        std::ifstream in(cfg_path);
        nlohmann::json j;
        in >> j;
        cfg = model_config_from_json(j);
      }
      cfg.input_size = data.image_size;
      cfg.classes = static_cast<int>(data.class_names.size());
      Model model = build_model(cfg);
      auto params = model.parameters();
      load_checkpoint(eval_ckpt, params);
      EvalReport ev = evaluate_model(model, data.val.empty() ? data.train : data.val);
      fs::create_directories(eval_out);
      write_text(eval_out + "/eval.json", eval_report_to_json(ev).dump(2) + "\n");
      write_text(eval_out + "/eval.md", eval_markdown(ev));
      std::cout << eval_report_to_json(ev).dump(2) << "\n";
    } else if (*aug_cmd) {
      InMemoryDataset data = load_dataset(aug_data);
      acfg.geometric.clear();
      for (const auto& op : split_csv(geo)) acfg.geometric.push_back(geom_op_from_string(op));
      ClassFrequencyTable table = compute_class_frequencies(data.train);
      RandomSource rng(acfg.seed);
      AugmentResult result = build_augmented_set(data.train, table, acfg, rng);
      InMemoryDataset out_data;
      out_data.train = result.images;
      out_data.val = data.val;
      out_data.class_names = data.class_names;
      out_data.image_size = data.image_size;
      fs::create_directories(aug_out);
      save_dataset(out_data, aug_out);
      write_text(aug_out + "/augmentation_manifest.json", result.manifest.dump(2) + "\n");
      std::cout << "augmented " << data.train.size() << " -> " << result.images.size()
                << " images in " << aug_out << "\n";
    } else if (*abl_cmd) {
      const std::vector<std::string> variants =
          abl_variants.empty() ? standard_variants() : split_csv(abl_variants);
      std::vector<uint64_t> seeds;
      for (const auto& s : split_csv(abl_seeds)) seeds.push_back(std::stoull(s));
      AblationTable table;
      if (!abl_data.empty()) {
        InMemoryDataset data = load_dataset(abl_data);
        abl_cfg.input_size = data.image_size;
        abl_cfg.classes = static_cast<int>(data.class_names.size());
        table = run_ablation_on(abl_cfg, data, variants, seeds);
      } else {
        abl_cfg.input_size = abl_spec.image_size;
        abl_cfg.classes = abl_spec.classes;
        table = run_ablation(abl_cfg, abl_spec, variants, seeds);
      }
      fs::create_directories(abl_out);
      write_text(abl_out + "/ablation.json", table.to_json().dump(2) + "\n");
      write_text(abl_out + "/ablation.md", table.to_markdown());
      std::cout << table.to_markdown();
      for (const auto& row : table.rows)
        if (row.diverged)
          std::cout << "variant " << row.variant << " seed " << row.seed
                    << " diverged: " << row.error << "\n";
    } else if (*render_cmd) {
      Image8 img = read_ppm(r_image);
      std::vector<LabelRecord> truths;
      if (!r_labels.empty()) truths = load_yolo_labels(r_labels);
      std::vector<Detection> dets;
      if (!r_ckpt.empty()) {
        const std::string cfg_path =
            r_cfg_json.empty() ? (fs::path(r_ckpt).parent_path() / "model_config.json").string()
                               : r_cfg_json;
        ModelConfig cfg;
        if (fs::exists(cfg_path)) {
          std::ifstream in(cfg_path);
          nlohmann::json j;
          in >> j;
          cfg = model_config_from_json(j);
        }
        cfg.input_size = img.w;
        Model model = build_model(cfg);
        auto params = model.parameters();
        load_checkpoint(r_ckpt, params);
        dets = predict(model, img);
      }
      render_detections(img, truths, dets, r_out);
      std::cout << "wrote " << r_out << " (" << truths.size() << " truths, " << dets.size()
                << " predictions)\n";
    } else if (*grad_cmd) {
      bool ok = true;
      for (const auto& e : gradient_suite()) {
        std::printf("%-28s max rel error %.3e %s\n", e.name.c_str(), e.max_rel_error,
                    e.max_rel_error < grad_tol ? "ok" : "FAIL");
        ok = ok && e.max_rel_error < grad_tol;
      }
      return ok ? 0 : 1;
    } else if (*flops_cmd) {
      FlopReport r = count_flops(fcfg);
      nlohmann::json j;
      for (const auto& [name, macs] : r.module_macs) j["modules"][name] = 2 * macs;
      j["total_flops"] = r.total_flops();
      j["variants"] = r.variant_flops;
      std::cout << j.dump(2) << "\n";
      std::printf("\n| module | MFLOPs |\n|---|---|\n");
      for (const auto& [name, macs] : r.module_macs)
        std::printf("| %s | %.3f |\n", name.c_str(), 2 * macs / 1e6);
      std::printf("| total | %.3f |\n", r.total_flops() / 1e6);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
