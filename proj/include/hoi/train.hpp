// Two-stage training: configuration, sampling, optimizer and the training loop.
#pragma once

#include "hoi/losses.hpp"
#include "hoi/model.hpp"
#include "hoi/params.hpp"
#include "hoi/scene.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hoi {

struct TrainConfig {
  ModelConfig model;
  LossWeights loss;
  double alpha = 3.0;  // crowded : sparse sampling weight
  int stage1_epochs = 30;
  int stage2_epochs = 10;
  double lr = 5e-4;
  double lr_drop_at = 2.0 / 3.0;  // fraction of a stage's epochs after which lr is ×0.1
  double weight_decay = 1e-4;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  int batch = 4;
  std::uint64_t seed = 1;
  double nis_threshold = 0.1;
  bool part_supervision = false;
  bool border_drop = false;
  // Detection loss also on every earlier detector layer, each with its own matching.
  bool aux_loss = true;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Plain "key = value" lines; '#' starts a comment. Keys: lambda1, lambda2,
// lambda3, alpha, nq, dc, heads, stage1_epochs, stage2_epochs, nis_threshold,
// part_supervision, border_drop, aux_loss, plus lr, batch, seed, ffn, scheme, schedule,
// weight_decay, grad_clip, image_size, grid_size. Unknown keys are errors.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

// Weighted sampling with replacement: weight 1 for sparse scenes, α for crowded ones.
class SparsitySampler {
 public:
  SparsitySampler(const std::vector<bool>& crowded, double alpha, std::uint64_t seed);

  std::size_t next();
  std::vector<std::size_t> draw(std::size_t count);
  double probability(std::size_t index) const { return probabilities_.at(index); }

 private:
  std::mt19937_64 rng_;
  std::discrete_distribution<std::size_t> dist_;
  std::vector<double> probabilities_;
};

SparsitySampler sparsity_adaptive_sampler(const std::vector<SceneTags>& tags, double alpha, std::uint64_t seed);

// Decoupled weight decay Adam over the parameters whose names start with one of `prefixes`.
class AdamW {
 public:
  AdamW(ParamStore& store, std::vector<std::string> prefixes, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);
  // Returns the gradient norm before clipping.
  double step(double lr, double clip_norm);
  bool updates(const std::string& name) const;

 private:
  struct Slot {
    ad::Var param;
    ad::Matrix m, v;
  };
  std::vector<Slot> slots_;
  std::vector<std::string> prefixes_;
  double weight_decay_, beta1_, beta2_, eps_;
  long long t_ = 0;
};

// Per-scene inputs that do not depend on parameters.
struct TrainSample {
  int id = 0;
  Matrix stem;
  PartMasks part_masks;
  std::array<std::vector<Box>, kNumParts> part_boxes;  // pixel boxes of every person
  std::vector<GroundTruthPair> gts;
  SceneTags tags;
};

TrainSample prepare_sample(const Scene& scene, const ModelConfig& config);
std::vector<TrainSample> prepare_samples(const std::vector<Scene>& scenes, const ModelConfig& config);

struct EpochLog {
  int stage = 1;
  int epoch = 0;
  double lr = 0;
  LossReport loss;  // mean over batches
  double crowded_fraction = 0;  // among this epoch's sampled scenes
  int draws = 0;
  int batches = 0;
  long long mask_fallbacks = 0;

  nlohmann::json to_json() const;
};

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parameter groups updated in each stage.
std::vector<std::string> stage_prefixes(int stage);

// Stage 1 minimises L_det + L_int (+ L_part), stage 2 L_det + L_verb.
// One JSON line per epoch goes to `log` when non-null.
std::vector<EpochLog> train_stage(HoiModel& model, int stage, const std::vector<TrainSample>& data,
                                  const TrainConfig& config, std::ostream* log = nullptr);

// Loss of one scene under the current parameters (records onto the active tape).
ad::Var scene_loss(const HoiModel& model, int stage, const TrainSample& sample, const TrainConfig& config,
                   const PartMasks& part_masks, LossReport* report, long long* fallbacks = nullptr);

Checkpoint make_checkpoint(const HoiModel& model, const TrainConfig& config, int stage,
                           const std::vector<EpochLog>& history);
// Rebuilds the model (architecture from the checkpoint header) and loads its tensors.
HoiModel model_from_checkpoint(const Checkpoint& ckpt);
TrainConfig config_from_checkpoint(const Checkpoint& ckpt);

}  // namespace hoi
