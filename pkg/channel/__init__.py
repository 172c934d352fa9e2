# Channel model module
