// Plants a pair of co-located users among three, finds them by perplexity,
// then forecasts user A's next slot from the shared model.
#include <iomanip>
#include <iostream>

#include "hcfctx/hcfctx.hpp"

using namespace hcfctx;

int main(int argc, char** argv) {
  const std::string schema_path = argc > 1 ? argv[1] : "samples/demo.schema";
  const FeatureSchema schema = load_schema(schema_path);

  SyntheticSpec spec;
  spec.stay = 0.7;
  spec.peak = 0.9;
  const auto truth = synthetic_model(4, ValueLayout(schema.cardinalities()), spec, 7);
  const Dataset log = sample_planted(truth, schema, 24 * 7 * 3, 2, 1, 11);

  SelectionConfig sel;
  sel.train.restarts = 2;
  const auto found = select_group(log, 2, 2, 6, sel, "A");
  std::cout << "best group " << group_label(found.group) << " K=" << found.K << " perplexity "
            << found.mean_perplexity << '\n';

  std::vector<std::size_t> members;
  for (const auto& name : found.group) members.push_back(log.require_user(name));
  const Dataset pair = restrict_users(log, members);
  const auto model = em_train(pair, found.K, sel.hyper.build(found.K, pair), sel.train).params;

  const auto fc = predict_next(model, pair);
  std::cout << "next slot " << utc::format_iso8601(fc.timestamp) << '\n';
  for (std::size_t f = 0; f < schema.size(); ++f) {
    const auto& p = fc.per_feature[f];
    std::cout << "  " << std::left << std::setw(15) << schema[f].name << schema[f].value_names[p.point] << "  p="
              << std::fixed << std::setprecision(2) << p.point_prob() << "  present=" << p.presence << '\n';
  }
}
