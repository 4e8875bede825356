#pragma once

#include "hsci/tensor.hpp"
#include "hsci/autodiff.hpp"
#include "hsci/nn.hpp"
#include "hsci/dct.hpp"
#include "hsci/cassi.hpp"
#include "hsci/optim.hpp"
#include "hsci/cmdt.hpp"
#include "hsci/unfolding.hpp"
#include "hsci/metrics.hpp"
#include "hsci/hfc.hpp"
#include "hsci/gaptv.hpp"
#include "hsci/scene.hpp"
#include "hsci/io.hpp"
