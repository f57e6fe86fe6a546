#pragma once

#include "pfgan/gantrain/checkpoint.hpp"
#include "pfgan/gantrain/gradcheck_suite.hpp"
#include "pfgan/gantrain/losses.hpp"
#include "pfgan/gantrain/trainer.hpp"
