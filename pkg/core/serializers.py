from rest_framework import serializers

MANIFEST_VERSION = '1.0'


class GridSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=['staggered'])
    divisions = serializers.IntegerField(min_value=2)
    extent = serializers.FloatField(min_value=0.0)
    point_count = serializers.IntegerField(min_value=3)
    triangle_count = serializers.IntegerField(min_value=1)

    def validate_extent(self, value):
        if value <= 0:
            raise serializers.ValidationError("Grid extent must be positive")
        return value


class ScheduleSerializer(serializers.Serializer):
    t0 = serializers.FloatField()
    beta = serializers.FloatField()
    max_iters = serializers.IntegerField(min_value=1)


class GenerationSerializer(serializers.Serializer):
    n_min = serializers.IntegerField(min_value=1)
    n_max = serializers.IntegerField(min_value=1)
    alpha = serializers.FloatField(min_value=0.0)
    seed = serializers.IntegerField(allow_null=True)
    attempts = serializers.IntegerField(min_value=0, default=0)
    schedule = ScheduleSerializer()

    def validate(self, data):
        if data['n_min'] > data['n_max']:
            raise serializers.ValidationError("n_min must not exceed n_max")
        return data


class RasterSerializer(serializers.Serializer):
    scale_mm = serializers.FloatField()
    pitch = serializers.FloatField()
    margin_mm = serializers.FloatField(min_value=0.0)
    dilation_radius_px = serializers.IntegerField(min_value=1)
    depth_mm = serializers.FloatField()
    subdivision = serializers.FloatField()
    voxel_mm = serializers.FloatField()

    def validate(self, data):
        for name in ('scale_mm', 'pitch', 'depth_mm', 'subdivision', 'voxel_mm'):
            if data[name] <= 0:
                raise serializers.ValidationError({name: "Must be positive"})
        return data


class EntrySerializer(serializers.Serializer):
    label = serializers.CharField(max_length=200)
    triangle_ids = serializers.ListField(child=serializers.IntegerField(min_value=0), min_length=1)
    hu = serializers.ListField(child=serializers.FloatField(), min_length=7, max_length=7)
    mask = serializers.CharField()
    cloud = serializers.CharField()
    stl = serializers.CharField()

    def validate_triangle_ids(self, value):
        if len(set(value)) != len(value):
            raise serializers.ValidationError("Triangle ids must be unique")
        return sorted(value)

    def validate(self, data):
        for name in ('mask', 'cloud', 'stl'):
            if '/' in data[name] or '\\' in data[name] or data[name].startswith('.'):
                raise serializers.ValidationError({name: "File references must be plain names inside the library"})
        return data


class ManifestSerializer(serializers.Serializer):
    version = serializers.CharField()
    grid = GridSerializer()
    generation = GenerationSerializer()
    raster = RasterSerializer()
    entries = EntrySerializer(many=True)

    def validate_entries(self, value):
        seen = set()
        for entry in value:
            if entry['label'] in seen:
                raise serializers.ValidationError(f"duplicate label '{entry['label']}'")
            seen.add(entry['label'])
        return value


def flatten_errors(detail, prefix=''):
    """Turn nested serializer errors into 'path: message' strings."""
    if isinstance(detail, dict):
        messages = []
        for key, value in detail.items():
            path = key if key == 'non_field_errors' and not prefix else (f"{prefix}.{key}" if prefix else str(key))
            messages.extend(flatten_errors(value, path))
        return messages
    if isinstance(detail, list):
        messages = []
        for index, value in enumerate(detail):
            if isinstance(value, (dict, list)):
                messages.extend(flatten_errors(value, f"{prefix}[{index}]"))
            elif value:
                messages.append(f"{prefix}: {value}" if prefix else str(value))
        return messages
    return [f"{prefix}: {detail}" if prefix else str(detail)]
