#pragma once

#include "trident/common.hpp"
#include "trident/tensor.hpp"
#include "trident/parameter.hpp"
#include "trident/conv.hpp"
#include "trident/ops.hpp"
#include "trident/gradcheck.hpp"
#include "trident/boxes.hpp"
#include "trident/suppression.hpp"
#include "trident/metrics.hpp"
#include "trident/backbone.hpp"
#include "trident/receptive_field.hpp"
#include "trident/head.hpp"
#include "trident/model.hpp"
#include "trident/synth.hpp"
#include "trident/train.hpp"
#include "trident/checkpoint.hpp"
#include "trident/config.hpp"
#include "trident/experiment.hpp"
