#pragma once

#include "sttr/attention.hpp"
#include "sttr/checkpoint.hpp"
#include "sttr/conv.hpp"
#include "sttr/dataset.hpp"
#include "sttr/errors.hpp"
#include "sttr/gradcheck.hpp"
#include "sttr/gradsuite.hpp"
#include "sttr/ingest.hpp"
#include "sttr/init.hpp"
#include "sttr/network.hpp"
#include "sttr/ntu.hpp"
#include "sttr/ops.hpp"
#include "sttr/random.hpp"
#include "sttr/scores.hpp"
#include "sttr/skeleton.hpp"
#include "sttr/synth.hpp"
#include "sttr/tensor.hpp"
#include "sttr/training.hpp"
