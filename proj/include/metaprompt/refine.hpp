#pragma once
// Recurrent refinement: the UNet output latent is fed back as its input for
// t steps, sharing parameters, with a per-step timestep embedding.

#include <vector>

#include "metaprompt/unet.hpp"

namespace metaprompt {

template <typename T>
struct RefinementState {
  BasicTensor<T> z;
  int step = 0;
  FeaturePyramid<T> pyramid;
};

/// Step i uses table.vectors[i] when `modulated`, otherwise table.vectors[0]
/// at every step. Requires 1 ≤ t_steps ≤ table.size() when modulated.
/// Returns every step's state; the last one carries the decoder's pyramid.
template <typename T>
std::vector<RefinementState<T>> refine_trace(const UNet<T>& unet, const BasicTensor<T>& z0,
                                             const BasicTensor<T>& prompts,
                                             const TimestepTable<T>& table, int t_steps,
                                             bool modulated = true);

template <typename T>
FeaturePyramid<T> refine(const UNet<T>& unet, const BasicTensor<T>& z0,
                         const BasicTensor<T>& prompts, const TimestepTable<T>& table, int t_steps,
                         bool modulated = true) {
  return refine_trace(unet, z0, prompts, table, t_steps, modulated).back().pyramid;
}

}  // namespace metaprompt
