from .losses import compute_loss, loss_pointwise, loss_stock_tanh, metric_stock_direction
from .loop import EpochRecord, TrainConfig, TrainLog, evaluate_loss, predict, train_loop
from .optim import Adam
from .schedulers import Handcrafted, Multiplicative, ReduceOnPlateau, SchedulerSpec, scheduler_step
