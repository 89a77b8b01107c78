// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <tuple>

#include "epiview/error.hpp"
#include "epiview/parallel.hpp"
#include "epiview/pipeline.hpp"

namespace epiview {

std::string describe(const AblationSpec& spec) {
  return to_string(spec.fusion) + "/" + to_string(spec.pretraining) + "/" + to_string(spec.bank);
}

std::vector<AblationSpec> standard_ablation_specs() {
  return {
      {Fusion::None, Pretraining::RandomInit, BankLayout::Shared},
      {Fusion::Epipolar, Pretraining::CopyProxy, BankLayout::Shared},
      {Fusion::Epipolar, Pretraining::SingleCenter, BankLayout::Shared},
      {Fusion::Epipolar, Pretraining::MultiCenter, BankLayout::Shared},
      {Fusion::Epipolar, Pretraining::MultiCenterReg, BankLayout::Shared},
      {Fusion::Epipolar, Pretraining::MultiCenterReg, BankLayout::PerView},
  };
}

double median(std::vector<double> values) {
  if (values.empty()) fail(ErrorCode::InvalidArgument, "median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

AblationTable run_ablation(const DataForSeed& data_for_seed, const std::vector<AblationSpec>& specs,
                           const std::vector<std::uint64_t>& seeds, const PipelineOptions& base,
                           const AblationProgress& progress) {
  // Seeds run in parallel; each seed trains its own arms once. Rows are
  // stored per seed and reported in seed order, so the table and the
  // progress stream do not depend on scheduling.
  std::vector<std::vector<AblationRow>> per_seed(seeds.size());
  std::vector<bool> done(seeds.size(), false);
  std::size_t reported = 0;
  std::mutex report_mutex;
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, base.threads), seeds.size()));
  parallel_for(seeds.size(), workers, [&](std::size_t s) {
    const std::uint64_t seed = seeds[s];
    const PipelineData data = data_for_seed(seed);
    std::map<std::pair<Fusion, Pretraining>, ProjectionWeights> trained;
    for (const auto& spec : specs) {
      PipelineOptions options = base;
      options.fusion = spec.fusion;
      options.pretraining = spec.pretraining;
      options.bank = spec.bank;
      options.train.seed = seed;
      if (workers > 1) options.threads = 1;
      std::optional<ProjectionWeights> weights;
      if (spec.fusion != Fusion::None) {
        const auto key = std::make_pair(spec.fusion, spec.pretraining);
        auto it = trained.find(key);
        if (it == trained.end()) it = trained.emplace(key, pretrain_arm(data, options).weights).first;
        weights = it->second;
      }
      const PipelineResult result = run_pipeline(data, options, weights);
      per_seed[s].push_back(AblationRow{spec, seed, metric_value(result.metrics, "image", "auroc"),
                                        metric_value(result.metrics, "sample", "auroc")});
    }
    const std::lock_guard<std::mutex> lock(report_mutex);
    done[s] = true;
    for (; reported < seeds.size() && done[reported]; ++reported) {
      if (!progress) continue;
      for (const auto& row : per_seed[reported]) progress(row);
    }
  });
  AblationTable table;
  for (auto& rows : per_seed) table.rows.insert(table.rows.end(), rows.begin(), rows.end());
  for (const auto& spec : specs) {
    std::vector<double> image, sample;
    for (const auto& r : table.rows) {
      if (describe(r.spec) == describe(spec)) {
        image.push_back(r.image_auroc);
        sample.push_back(r.sample_auroc);
      }
    }
    table.summary.push_back({spec, median(image), median(sample)});
  }
  return table;
}

std::string ablation_csv(const AblationTable& table) {
  std::ostringstream os;
  os << std::setprecision(17) << "fusion,pretraining,bank,seed,image_auroc,sample_auroc\n";
  for (const auto& r : table.rows) {
    os << to_string(r.spec.fusion) << ',' << to_string(r.spec.pretraining) << ',' << to_string(r.spec.bank) << ','
       << r.seed << ',' << r.image_auroc << ',' << r.sample_auroc << "\n";
  }
  for (const auto& s : table.summary) {
    os << to_string(s.spec.fusion) << ',' << to_string(s.spec.pretraining) << ',' << to_string(s.spec.bank)
       << ",median," << s.median_image_auroc << ',' << s.median_sample_auroc << "\n";
  }
  return os.str();
}

}  // namespace epiview
