import torch
import torch.nn as nn
import torch.nn.functional as F

from meeso.core_types import BlockFamily


def dropout(x, rate, active, generator=None):
    """
    Inverted dropout with an explicit generator so that every mask is
    reproducible; identity when inactive
    """
    if not active or rate == 0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= rate
    return x * keep / (1 - rate)


class PlainUnit(nn.Module):

    def __init__(self, in_width, width):
        super(PlainUnit, self).__init__()
        self.fc = nn.Linear(in_width, width)

    def forward(self, x, rate, active, generator=None):
        return dropout(F.relu(self.fc(x)), rate, active, generator)


class ResidualUnit(nn.Module):
    """
    Two sub-layers with an identity shortcut; the shortcut is only added
    when the unit input already has the output width
    """

    def __init__(self, in_width, inner_width, width):
        super(ResidualUnit, self).__init__()
        self.fc1 = nn.Linear(in_width, inner_width)
        self.fc2 = nn.Linear(inner_width, width)
        self.skip = in_width == width

    def forward(self, x, rate, active, generator=None):
        shortcut = x
        x = dropout(F.relu(self.fc1(x)), rate, active, generator)
        x = dropout(F.relu(self.fc2(x)), rate, active, generator)
        if self.skip:
            x = x + shortcut
        return x


class BlockNet(nn.Module):
    """
    Fully connected classifier grown from an ArchitectureSpec: per layer,
    blocks_per_layer[l] sub-layers of width widths_per_layer[l]. Residual
    pairs consecutive sub-layers under a shortcut, Bottleneck additionally
    halves the inner sub-layer of each pair.
    """

    def __init__(self, arch, in_size, out_size):
        super(BlockNet, self).__init__()
        self.dropout_rate = arch.dropout_rate
        units = []
        in_width = in_size
        for n_blocks, width in zip(arch.blocks_per_layer, arch.widths_per_layer):
            if arch.block_family is BlockFamily.Plain:
                n_pairs = 0
            else:
                n_pairs = n_blocks // 2
            inner_width = width
            if arch.block_family is BlockFamily.Bottleneck:
                inner_width = max(width // 2, 1)
            for _ in range(n_pairs):
                units.append(ResidualUnit(in_width, inner_width, width))
                in_width = width
            for _ in range(n_blocks - 2 * n_pairs):
                units.append(PlainUnit(in_width, width))
                in_width = width
        self.units = nn.ModuleList(units)
        self.fc_out = nn.Linear(in_width, out_size)

    def forward(self, x, dropout_active=False, generator=None):
        for unit in self.units:
            x = unit(x, self.dropout_rate, dropout_active, generator)
        return self.fc_out(x)

    def predict_proba(self, x, dropout_active=False, generator=None):
        return torch.softmax(self.forward(x, dropout_active, generator), dim=-1)


def build_net(arch, in_size, out_size, seed):
    """
    Initialize a BlockNet in double precision from a fixed seed without
    touching the global torch random state
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = BlockNet(arch, in_size, out_size)
    return net.double()


def parameter_count(arch, in_size, out_size):
    """
    Number of trainable parameters of the BlockNet for `arch`, without
    building it
    """
    with torch.device("meta"):
        net = BlockNet(arch, in_size, out_size)
    return sum(p.numel() for p in net.parameters())
