#pragma once

#include <iosfwd>

#include "mocl/checkpoint.hpp"
#include "mocl/config.hpp"

namespace mocl {

// Pipeline stages. run() composes gen-data -> train -> eval per seed, so a
// stage invoked standalone against the same files reproduces run()'s outputs
// byte for byte. Every stage that consumes artifacts verifies the recorded
// config and suite hashes first and refuses stale combinations.

// Materializes the task suite as JSONL: generated suites are sampled (suite
// seed 0 follows the run seed), corpus sources are loaded, reordered and
// re-exported.
void cmd_gen_data(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& out_path);

// Trains the configured method on the suite file. Writes vocab.txt, the
// boundary-replay accuracy matrices, FWT references (isolated per-task runs
// with matched streams), the matching-weight heatmap (mocl) and a checkpoint
// into artifacts_dir.
void cmd_train(const ExperimentConfig& cfg, const std::string& suite_path,
               const std::string& artifacts_dir, std::uint64_t seed, std::ostream& log);

// Assembles metrics.json from the artifacts dir, recomputing the final matrix
// row from the checkpoint as a consistency check.
void cmd_eval(const ExperimentConfig& cfg, const std::string& artifacts_dir,
              const std::string& suite_path, std::ostream& log);

// Eq-2 forward transfer from serialized matrices.
double cmd_fwt(const std::string& matrix_csv, const std::string& refs_csv);

// Recomputes the matching-weight heatmap of a mocl checkpoint; idempotent.
void cmd_heatmap(const std::string& artifacts_dir, const std::string& suite_path,
                 const std::string& out_csv);

// Full experiment: per-seed pipeline plus a cross-seed aggregate. Returns a
// process exit code.
int cmd_run(const ExperimentConfig& cfg, std::ostream& log);

// Layout helper: <outdir>/<method>/<seed>.
std::string seed_dir(const ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace mocl
