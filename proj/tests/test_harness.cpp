// Default configuration, full LOSO: slow (minutes), kept out of the unit label.
#include <catch_amalgamated.hpp>

#include "orient/train.hpp"

using namespace orient;

TEST_CASE("default training beats chance") {
  const RunConfig run;
  const RunResult r = train(run, run.seed);
  INFO("micro accuracy " << r.micro_accuracy << ", macro-F1 " << r.micro_macro_f1);
  CHECK(r.completed_folds == run.data.num_subjects);
  CHECK(r.micro_accuracy > 1.0 / static_cast<double>(run.model.num_classes));
  CHECK(r.micro_macro_f1 > 1.0 / static_cast<double>(run.model.num_classes));
}
