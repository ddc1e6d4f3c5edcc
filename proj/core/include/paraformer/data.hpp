#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "paraformer/common.hpp"

namespace paraformer {

struct VariableSpec {
  std::string name;
  int64_t levels = 1;  // 60 for profile variables, 1 for scalars
  std::string unit;
  std::vector<double> energy_scale;  // native unit -> W/m^2, per level
};

struct DatasetMeta {
  std::vector<std::array<double, 2>> grid;  // {lat_deg, lon_deg} per cell
  std::vector<VariableSpec> in_vars;
  std::vector<VariableSpec> out_vars;
  std::string t0 = "0001-02-01T00:00:00";
  int64_t step_minutes = 20;
};

int64_t total_levels(const std::vector<VariableSpec>& vars);

// Channel offset of each variable within the packed feature axis.
std::vector<int64_t> channel_offsets(const std::vector<VariableSpec>& vars);

// Gridded series: inputs [T, G, f_in], targets [T, G, f_out], float32
// storage. Immutable after load; all math upcasts to double.
struct DatasetTensor {
  int64_t t_len = 0;
  int64_t g_len = 0;
  int64_t f_in = 0;
  int64_t f_out = 0;
  std::vector<float> inputs;
  std::vector<float> targets;
  DatasetMeta meta;

  float input_at(int64_t t, int64_t g, int64_t c) const {
    return inputs[(t * g_len + g) * f_in + c];
  }
  float target_at(int64_t t, int64_t g, int64_t c) const {
    return targets[(t * g_len + g) * f_out + c];
  }

  // Checks size consistency and finiteness of header-derived counts.
  void validate() const;
};

// Sequenced samples [count, L, F] with (t, g) provenance per position and a
// mask marking which positions are evaluated and trained on.
struct WindowBatch {
  int64_t count = 0;       // number of sequences (B_new)
  int64_t window_len = 0;  // L
  int64_t f_in = 0;
  int64_t f_out = 0;
  std::vector<float> x;            // [count, L, f_in]
  std::vector<float> y;            // [count, L, f_out]
  std::vector<int32_t> src_t;      // [count, L]
  std::vector<int32_t> src_g;      // [count, L]
  std::vector<uint8_t> score_mask; // [count, L]

  int64_t scored_positions() const;
};

struct NormStats {
  std::vector<double> in_mean, in_std;
  std::vector<double> out_mean, out_std;
  std::vector<uint8_t> in_constant, out_constant;  // std < 1e-12
};

struct SplitResult {
  DatasetTensor train, val, test;
};

// Keeps t = 0, stride, 2*stride, ... and multiplies step_minutes by stride.
DatasetTensor temporal_subsample(const DatasetTensor& d, int64_t stride);

// Contiguous chronological blocks train -> val -> test. Fractions are of the
// time axis; the test block takes the remainder.
SplitResult split_by_time(const DatasetTensor& d, double train_frac,
                          double val_frac);

// Disjoint length-L blocks per grid cell, remainder timesteps dropped;
// every position is scored. Ordering: grid-major, then window index.
WindowBatch make_nonoverlapping_windows(const DatasetTensor& d, int64_t window_len);

// Stride-1 windows [t-L+1, t] per grid cell; only the final position is
// scored, so each (t, g) is predicted exactly once.
WindowBatch make_sliding_windows(const DatasetTensor& d, int64_t window_len);

// Per-channel mean/std over all (t, g) samples of the training split.
NormStats compute_norm_stats(const DatasetTensor& train);

// z-score with the given stats; constant channels map to 0.
DatasetTensor normalize(const DatasetTensor& d, const NormStats& stats);

// Inverse of normalize.
DatasetTensor denormalize(const DatasetTensor& d, const NormStats& stats);

// In-place inverse z-score of packed output rows [n, f_out].
void denormalize_outputs(std::vector<double>& values, const NormStats& stats);

enum class SyntheticPreset { kV1Small, kV2Small, kCustom };

SyntheticPreset preset_from_string(const std::string& name);
std::string preset_to_string(SyntheticPreset preset);

struct SyntheticConfig {
  SyntheticPreset preset = SyntheticPreset::kV1Small;
  int64_t t_len = 2048;
  int64_t g_len = 16;
  uint64_t seed = 0;
  double lag_strength = 1.0;       // alpha: weight of the t-2 / t-4 terms
  double latent_persistence = 0.0; // rho: AR(1) coefficient of the latent
  double latent_weight = 0.5;      // beta: weight of the latent term
  int64_t custom_f_in = 8;         // used by the custom preset only
  int64_t custom_f_out = 4;
};

// ClimSim-shaped series with controllable temporal memory. Targets are
//   y_t = tanh(A x_t) + alpha (B x_{t-2} + C x_{t-4}) + beta D z_t + eps,
// with fixed seed-derived projections, so a window of 5 covers every lag
// while a context-free model sees none of them.
DatasetTensor generate_synthetic(const SyntheticConfig& config);

// Variable catalogs backing the presets.
std::vector<VariableSpec> preset_input_vars(SyntheticPreset preset,
                                            int64_t custom_width = 0);
std::vector<VariableSpec> preset_output_vars(SyntheticPreset preset,
                                             int64_t custom_width = 0);

// Binary dataset file ("CPSD") plus a JSON metadata sidecar at path + ".json".
void write_dataset(const DatasetTensor& d, const std::string& path);
DatasetTensor read_dataset(const std::string& path);

}  // namespace paraformer
