// hoi_cli: dataset synthesis, two-stage training, evaluation, token
// benchmark, attention heatmaps and ablations.
#include "hoi/experiment.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

using namespace hoi;
namespace fs = std::filesystem;

namespace {

std::vector<Scene> load_scenes(const fs::path& path) { return scenes_from_annotations(load_annotations(path)); }

TrainConfig base_config(const std::string& config_path) {
  TrainConfig c;
  // Desk-scale defaults used throughout the acceptance runs.
  c.model.dim = 32;
  c.model.ffn_hidden = 128;
  c.lr = 2e-3;
  return config_path.empty() ? c : load_config(config_path, c);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void write_pgm(const fs::path& path, const Matrix& weights, int row, const GridSpec& spec, int scale) {
  const double peak = std::max(weights.row(row).maxCoeff(), 1e-12);
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << spec.grid_width * scale << ' ' << spec.grid_height * scale << "\n255\n";
  for (int y = 0; y < spec.grid_height * scale; ++y) {
    for (int x = 0; x < spec.grid_width * scale; ++x) {
      const double w = weights(row, (y / scale) * spec.grid_width + x / scale);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * w / peak))));
    }
  }
}

struct EvalArgs {
  std::string data, checkpoint, split = "all", predictions_out, csv_out, dump_out;
  std::optional<double> nis;
};

int run_eval(const EvalArgs& a) {
  const auto split = split_from_name(a.split);
  if (!split) throw CLI::ValidationError("--split", "unknown split " + a.split);
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const HoiModel model = model_from_checkpoint(ckpt);
  const bool verbs = ckpt.meta.at("stage").get<int>() >= 2;
  std::vector<Scene> scenes = load_scenes(a.data);
  if (*split != Split::all) {
    std::erase_if(scenes, [&](const Scene& s) { return !in_split(tag_hard_cases(s.annotation), *split); });
  }
  const auto preds = predict_all(model, scenes, verbs);
  if (!a.predictions_out.empty()) {
    std::ofstream out(a.predictions_out);
    write_predictions_jsonl(preds, out);
  }
  if (!a.dump_out.empty()) {
    std::ofstream out(a.dump_out);
    for (const auto& s : scenes) out << interactiveness_dump(model, s).dump() << '\n';
  }
  std::cout << std::fixed << std::setprecision(4);
  std::cout << "images " << scenes.size() << " split " << a.split << '\n';
  std::cout << "interactiveness_ap " << interactiveness_ap_of(preds, scenes) << '\n';
  if (verbs) {
    const double theta = a.nis.value_or(0.0);
    const MapReport r = hoi_map_of(preds, scenes, theta);
    std::cout << "hoi_map " << r.map << " nis " << theta << " categories " << r.per_category.size() << " skipped "
              << r.skipped_categories << '\n';
  } else if (a.nis) {
    std::cout << "hoi_map n/a (stage-1 checkpoint has no verb head)\n";
  }
  const std::vector<Split> splits(kAllSplits.begin(), kAllSplits.end());
  const auto rows = interactiveness_split_report(preds, scenes, splits);
  std::cout << format_split_table(rows, "interactiveness_ap");
  if (!a.csv_out.empty()) std::ofstream(a.csv_out) << format_split_csv(rows, "interactiveness_ap");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Body-part interactiveness HOI detection at desk scale"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic annotated dataset");
  int count = 500, first_id = 0;
  std::uint64_t seed = 11;
  double crowded_rate = SceneProfile{}.crowded_rate;
  std::string out_path;
  synth->add_option("--count", count, "Number of scenes")->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "Root seed");
  synth->add_option("--first-id", first_id, "Id of the first scene");
  synth->add_option("--crowded-rate", crowded_rate, "Fraction of crowded scenes")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--out", out_path, "Annotation JSON")->required();

  auto* train = app.add_subcommand("train", "Run one training stage");
  int stage = 1;
  std::string data_path, config_path, init_path, log_path;
  train->add_option("--stage", stage, "1: detector and interactiveness, 2: verbs")
      ->required()
      ->check(CLI::IsMember({1, 2}));
  train->add_option("--data", data_path, "Annotation JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  train->add_option("--init", init_path, "Checkpoint to continue from (required for stage 2)")
      ->check(CLI::ExistingFile);
  train->add_option("--out", out_path, "Checkpoint to write")->required();
  train->add_option("--log", log_path, "Per-epoch JSON lines");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  EvalArgs ev;
  eval->add_option("--data", ev.data, "Annotation JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", ev.split, "all|sparse|crowded|tiny|normal|less-occ|more-occ");
  eval->add_option("--nis", ev.nis, "Interactiveness threshold for non-interaction suppression (0.1 is typical)")
      ->check(CLI::Range(0.0, 1.0));
  eval->add_option("--predictions", ev.predictions_out, "Write predictions as JSON lines");
  eval->add_option("--csv", ev.csv_out, "Write the split table as CSV");
  eval->add_option("--dump", ev.dump_out, "Write per-image interactiveness dumps as JSON lines");

  auto* bench = app.add_subcommand("bench-tokens", "Merged vs. per-part token-op counts");
  std::string bench_ckpt;
  int bench_count = 100;
  std::uint64_t bench_seed = 7;
  bench->add_option("--checkpoint", bench_ckpt, "Checkpoint (default: freshly initialised model)")
      ->check(CLI::ExistingFile);
  bench->add_option("--data", data_path, "Annotation JSON (default: generated crowded scenes)")
      ->check(CLI::ExistingFile);
  bench->add_option("--count", bench_count, "Generated scenes")->check(CLI::PositiveNumber);
  bench->add_option("--seed", bench_seed, "Seed of generated scenes and fresh model");

  auto* viz = app.add_subcommand("viz-attention", "Export per-layer attention heatmaps");
  int image = 0, proposal = 0, scale = 16;
  std::string part = "hands", viz_dir;
  viz->add_option("--checkpoint", init_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  viz->add_option("--data", data_path, "Annotation JSON")->required()->check(CLI::ExistingFile);
  viz->add_option("--image", image, "Scene index in the file");
  viz->add_option("--proposal", proposal, "Proposal index");
  viz->add_option("--part", part, "head|arms|hands|hip|legs|feet");
  viz->add_option("--scale", scale, "Pixels per token in the PGM")->check(CLI::PositiveNumber);
  viz->add_option("--out", viz_dir, "Output directory")->required();

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate one ablated variant");
  Ablation ab;
  std::string test_path;
  std::vector<std::uint64_t> seeds = {1};
  ablate->add_flag("--no-progressive", ab.no_progressive, "Body-part map in every layer");
  ablate->add_flag("--no-sampler", ab.no_sampler, "Uniform scene sampling");
  ablate->add_flag("--no-merge", ab.no_merge, "Six masked passes instead of one");
  ablate->add_flag("--no-bodypart", ab.no_bodypart, "All-ones masks");
  ablate->add_option("--data", data_path, "Training annotations")->required()->check(CLI::ExistingFile);
  ablate->add_option("--test", test_path, "Held-out annotations")->required()->check(CLI::ExistingFile);
  ablate->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  ablate->add_option("--seeds", seeds, "Training seeds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      SceneProfile profile;
      profile.crowded_rate = crowded_rate;
      std::vector<SceneAnnotation> annotations;
      for (const auto& s : generate_dataset(seed, count, profile, first_id)) annotations.push_back(s.annotation);
      save_annotations(annotations, out_path);
      std::cout << "wrote " << annotations.size() << " scenes to " << out_path << '\n';
    } else if (*train) {
      TrainConfig config;
      std::optional<HoiModel> model;
      nlohmann::json earlier = nlohmann::json::array();
      if (!init_path.empty()) {
        const Checkpoint ckpt = load_checkpoint(init_path);
        config = config_path.empty() ? config_from_checkpoint(ckpt) : load_config(config_path, config_from_checkpoint(ckpt));
        model.emplace(model_from_checkpoint(ckpt));
        earlier = ckpt.meta.at("history");
      } else {
        if (stage == 2) throw std::invalid_argument("stage 2 needs --init with a stage-1 checkpoint");
        config = base_config(config_path);
        model.emplace(config.model, config.seed);
      }
      const auto data = prepare_samples(load_scenes(data_path), config.model);
      std::ofstream log_file;
      if (!log_path.empty()) log_file.open(log_path);
      const auto history = train_stage(*model, stage, data, config, log_path.empty() ? &std::cout : &log_file);
      Checkpoint out = make_checkpoint(*model, config, stage, history);
      for (const auto& e : out.meta.at("history")) earlier.push_back(e);
      out.meta["history"] = earlier;
      save_checkpoint(out, out_path);
      std::cout << "wrote " << out_path << '\n';
    } else if (*eval) {
      return run_eval(ev);
    } else if (*bench) {
      std::vector<Scene> scenes;
      if (data_path.empty()) {
        SceneProfile profile;
        profile.crowded_rate = 1.0;
        scenes = generate_dataset(bench_seed, bench_count, profile);
      } else {
        scenes = load_scenes(data_path);
      }
      TrainConfig config = base_config("");
      config.seed = bench_seed;
      const HoiModel model =
          bench_ckpt.empty() ? HoiModel(config.model, config.seed) : model_from_checkpoint(load_checkpoint(bench_ckpt));
      std::vector<double> ratios;
      std::cout << "image_id,merged,intuitive,ratio\n";
      int not_cheaper = 0;
      for (const auto& b : bench_tokens(model, scenes)) {
        const double r = static_cast<double>(b.merged) / static_cast<double>(b.intuitive);
        ratios.push_back(r);
        not_cheaper += b.merged >= b.intuitive;
        std::cout << b.image_id << ',' << b.merged << ',' << b.intuitive << ',' << r << '\n';
      }
      std::cout << "median_ratio " << median(ratios) << " scenes_not_cheaper " << not_cheaper << '\n';
    } else if (*viz) {
      const Checkpoint ckpt = load_checkpoint(init_path);
      const HoiModel model = model_from_checkpoint(ckpt);
      const auto scenes = load_scenes(data_path);
      if (image < 0 || image >= static_cast<int>(scenes.size())) throw std::out_of_range("--image out of range");
      if (proposal < 0 || proposal >= model.config().num_queries) throw std::out_of_range("--proposal out of range");
      const auto k = part_from_name(part);
      if (!k) throw CLI::ValidationError("--part", "unknown part " + part);
      const Scene& scene = scenes[static_cast<std::size_t>(image)];
      const GridSpec spec = model.grid();
      const FeatureGrid grid = model.encode(stem_features(scene.image, spec, model.config().stem_cells));
      const DetectorOutput det = model.detect(grid);
      const auto masks = model.proposal_masks(det, build_part_masks(scene.annotation, spec));
      PartFlags only{};
      only[index(*k)] = true;
      AttentionTrace trace;
      model.interactiveness_head().forward(grid, det.embeddings, masks, true, &trace,
                                           std::vector<PartFlags>(masks.size(), only));
      fs::create_directories(viz_dir);
      std::ofstream csv(fs::path(viz_dir) / "attention.csv");
      csv << "proposal,part,layer,row,col,weight\n";
      for (std::size_t l = 0; l < trace.weights.size(); ++l) {
        const Matrix& w = trace.weights[l];
        std::ostringstream name;
        name << "p" << proposal << '_' << part << "_layer" << l + 1 << ".pgm";
        write_pgm(fs::path(viz_dir) / name.str(), w, proposal, spec, scale);
        for (int t = 0; t < spec.tokens(); ++t) {
          csv << proposal << ',' << part << ',' << l + 1 << ',' << t / spec.grid_width << ',' << t % spec.grid_width
              << ',' << std::setprecision(17) << w(proposal, t) << '\n';
        }
      }
      std::cout << "wrote " << trace.weights.size() << " layers to " << viz_dir << '\n';
    } else if (*ablate) {
      const TrainConfig config = apply_ablation(base_config(config_path), ab);
      const auto data = prepare_samples(load_scenes(data_path), config.model);
      const auto test = load_scenes(test_path);
      std::cout << "seed,interactiveness_ap,sparse_ap,crowded_ap\n";
      for (std::uint64_t s : seeds) {
        TrainConfig c = config;
        c.seed = s;
        const TrainedModel t = train_two_stage(data, c, false);
        const auto preds = predict_all(t.model, test, false);
        const auto rows = interactiveness_split_report(preds, test, {Split::sparse, Split::crowded});
        auto cell = [](const SplitRow& r) {
          std::ostringstream o;
          if (r.value) o << std::fixed << std::setprecision(4) << *r.value; else o << "n/a";
          return o.str();
        };
        std::cout << s << ',' << std::fixed << std::setprecision(4) << interactiveness_ap_of(preds, test) << ',' << cell(rows[0]) << ',' << cell(rows[1])
                  << '\n';
      }
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
