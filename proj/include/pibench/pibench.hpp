#pragma once

#include "pibench/attack.hpp"
#include "pibench/chat.hpp"
#include "pibench/cli.hpp"
#include "pibench/corpus.hpp"
#include "pibench/defense.hpp"
#include "pibench/error.hpp"
#include "pibench/eval.hpp"
#include "pibench/model.hpp"
#include "pibench/report.hpp"
#include "pibench/version.hpp"
