#include "metaprompt/refine.hpp"

#include <string>

namespace metaprompt {

template <typename T>
std::vector<RefinementState<T>> refine_trace(const UNet<T>& unet, const BasicTensor<T>& z0,
                                             const BasicTensor<T>& prompts,
                                             const TimestepTable<T>& table, int t_steps,
                                             bool modulated) {
  const int limit = modulated ? table.size() : (table.size() > 0 ? t_steps : 0);
  if (t_steps < 1 || t_steps > limit) {
    throw std::out_of_range("refine: t_steps=" + std::to_string(t_steps) + " outside [1, " +
                            std::to_string(table.size()) + "]");
  }
  std::vector<RefinementState<T>> trace;
  trace.reserve(static_cast<std::size_t>(t_steps));
  BasicTensor<T> z = z0;
  for (int i = 0; i < t_steps; ++i) {
    auto out = unet.forward(z, prompts, table.vectors[modulated ? i : 0]);
    z = out.z;
    trace.push_back({out.z, i, std::move(out.pyramid)});
  }
  return trace;
}

template std::vector<RefinementState<float>> refine_trace(const UNet<float>&, const Tensor&,
                                                          const Tensor&,
                                                          const TimestepTable<float>&, int, bool);
template std::vector<RefinementState<double>> refine_trace(const UNet<double>&, const TensorD&,
                                                           const TensorD&,
                                                           const TimestepTable<double>&, int,
                                                           bool);

}  // namespace metaprompt
