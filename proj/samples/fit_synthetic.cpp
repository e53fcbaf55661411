// Simulates a small population, fits the base model and prints the mastery
// table.
#include <iostream>

#include "iafm/iafm.hpp"

int main() {
  auto params = iafm::synth::default_gen_params();
  params.n_students = 300;
  const auto generated = iafm::synth::generate(params);

  const auto fit = iafm::glmm::fit(generated.dataset, iafm::base_model());
  std::cout << "theta_pop " << fit.fixed_effects.theta_pop << "  delta_pop "
            << fit.fixed_effects.delta_pop << "  converged " << std::boolalpha << fit.converged
            << "\n\n";

  const auto rows = iafm::analytics::mastery_table(
      fit, iafm::analytics::default_reference_offset(fit));
  iafm::analytics::write_text(std::cout, std::span<const iafm::analytics::MasteryRow>(rows));
}
